import { Frame, Intrinsics } from "../src/formats";

export function toyIntrinsics(width: number, height: number): Intrinsics {
    return { fx: 40, fy: 40, cx: width / 2, cy: height / 2, width, height };
}

/** Deterministic little LCG so toy data is stable across runs. */
export function lcg(seed: number): () => number {
    let state = seed >>> 0;
    return () => {
        state = (state * 1664525 + 1013904223) >>> 0;
        return state / 0xffffffff;
    };
}

export function toyFrame(
    index: number,
    width = 16,
    height = 16,
    invalidDepth = false,
): Frame {
    const rand = lcg(index + 1);
    const rgb = new Uint8Array(width * height * 3);
    const depth = new Float32Array(width * height);
    for (let i = 0; i < width * height; i++) {
        rgb[i * 3] = Math.floor(rand() * 256);
        rgb[i * 3 + 1] = Math.floor(rand() * 256);
        rgb[i * 3 + 2] = Math.floor(rand() * 256);
        depth[i] = invalidDepth ? 0 : 1 + rand();
    }
    const pose = new Float64Array([
        1, 0, 0, 0.1 * index,
        0, 1, 0, 0,
        0, 0, 1, 0,
        0, 0, 0, 1,
    ]);
    return {
        index,
        width,
        height,
        rgb,
        depth,
        pose,
        intrinsics: toyIntrinsics(width, height),
    };
}

export function encodeFrame(frame: Frame): Buffer {
    const n = frame.width * frame.height;
    const buffer = Buffer.alloc(16 + n * 3 + n * 4 + 128);
    buffer.write("RELOCFRM", 0, "ascii");
    buffer.writeUInt32LE(frame.width, 8);
    buffer.writeUInt32LE(frame.height, 12);
    Buffer.from(frame.rgb).copy(buffer, 16);
    let off = 16 + n * 3;
    for (let i = 0; i < n; i++) {
        buffer.writeFloatLE(frame.depth[i], off + i * 4);
    }
    off += n * 4;
    for (let i = 0; i < 16; i++) {
        buffer.writeDoubleLE(frame.pose[i], off + i * 8);
    }
    return buffer;
}

/**
 * Binary formats shared with the relocalisation engine.
 *
 * Frames arrive in the native sequence layout (a directory with
 * sequence.json plus one RELOCFRM file per frame); predictions leave as
 * RELOCPRD files, one per frame, which the engine replays in place of
 * its synthetic oracle.
 */

import * as fs from "fs";
import * as path from "path";

const FRAME_MAGIC = "RELOCFRM";
const PREDICTION_MAGIC = "RELOCPRD";

export interface Intrinsics {
    fx: number;
    fy: number;
    cx: number;
    cy: number;
    width: number;
    height: number;
}

export interface Frame {
    index: number;
    width: number;
    height: number;
    /** Row-major (h, w, 3) bytes. */
    rgb: Uint8Array;
    /** Row-major (h, w) metres; 0 marks invalid pixels. */
    depth: Float32Array;
    /** Row-major 4x4 camera-to-world matrix. */
    pose: Float64Array;
    intrinsics: Intrinsics;
}

export class FormatError extends Error {}

export function readFrame(
    filePath: string,
    index: number,
    intrinsics: Intrinsics,
): Frame {
    const data = fs.readFileSync(filePath);
    if (data.length < 16 || data.toString("ascii", 0, 8) !== FRAME_MAGIC) {
        throw new FormatError(`bad magic in ${filePath}`);
    }
    const width = data.readUInt32LE(8);
    const height = data.readUInt32LE(12);
    const n = width * height;
    const expected = 16 + n * 3 + n * 4 + 16 * 8;
    if (data.length !== expected) {
        throw new FormatError(`truncated frame file ${filePath}`);
    }
    let off = 16;
    const rgb = new Uint8Array(data.buffer, data.byteOffset + off, n * 3);
    off += n * 3;
    const depth = new Float32Array(n);
    for (let i = 0; i < n; i++) {
        depth[i] = data.readFloatLE(off + i * 4);
    }
    off += n * 4;
    const pose = new Float64Array(16);
    for (let i = 0; i < 16; i++) {
        pose[i] = data.readDoubleLE(off + i * 8);
    }
    return {
        index,
        width,
        height,
        rgb: rgb.slice(),
        depth,
        pose,
        intrinsics,
    };
}

export function readSequence(dir: string): Frame[] {
    const metaPath = path.join(dir, "sequence.json");
    if (!fs.existsSync(metaPath)) {
        throw new FormatError(`missing sequence.json in ${dir}`);
    }
    const meta = JSON.parse(fs.readFileSync(metaPath, "utf8"));
    const intrinsics: Intrinsics = meta.intrinsics;
    const frames: Frame[] = [];
    for (const name of fs.readdirSync(dir).sort()) {
        const match = /^frame-(\d+)\.bin$/.exec(name);
        if (!match) {
            continue;
        }
        frames.push(
            readFrame(path.join(dir, name), parseInt(match[1], 10), intrinsics),
        );
    }
    frames.sort((a, b) => a.index - b.index);
    return frames;
}

export interface PredictionGrid {
    frameIndex: number;
    gridWidth: number;
    gridHeight: number;
    /** Row-major (gh, gw, 3) float32 world points. */
    points: Float32Array;
    /** Row-major (gh, gw); non-zero marks a valid prediction. */
    valid: Uint8Array;
}

export function writePredictionFile(
    filePath: string,
    grid: PredictionGrid,
): void {
    const n = grid.gridWidth * grid.gridHeight;
    if (grid.points.length !== n * 3 || grid.valid.length !== n) {
        throw new FormatError("prediction grid arrays have wrong lengths");
    }
    const buffer = Buffer.alloc(8 + 16 + n + n * 12);
    buffer.write(PREDICTION_MAGIC, 0, "ascii");
    buffer.writeUInt32LE(1, 8); // format version
    buffer.writeUInt32LE(grid.frameIndex, 12);
    buffer.writeUInt32LE(grid.gridWidth, 16);
    buffer.writeUInt32LE(grid.gridHeight, 20);
    let off = 24;
    for (let i = 0; i < n; i++) {
        buffer.writeUInt8(grid.valid[i] ? 1 : 0, off + i);
    }
    off += n;
    for (let i = 0; i < n; i++) {
        for (let c = 0; c < 3; c++) {
            const value = grid.valid[i] ? grid.points[i * 3 + c] : 0;
            buffer.writeFloatLE(value, off + (i * 3 + c) * 4);
        }
    }
    fs.writeFileSync(filePath, buffer);
}

export function readPredictionFile(filePath: string): PredictionGrid {
    const data = fs.readFileSync(filePath);
    if (
        data.length < 24 ||
        data.toString("ascii", 0, 8) !== PREDICTION_MAGIC
    ) {
        throw new FormatError(`bad magic in ${filePath}`);
    }
    const version = data.readUInt32LE(8);
    if (version !== 1) {
        throw new FormatError(`unsupported prediction version ${version}`);
    }
    const frameIndex = data.readUInt32LE(12);
    const gridWidth = data.readUInt32LE(16);
    const gridHeight = data.readUInt32LE(20);
    const n = gridWidth * gridHeight;
    if (data.length !== 24 + n + n * 12) {
        throw new FormatError(`truncated prediction file ${filePath}`);
    }
    const valid = new Uint8Array(n);
    const points = new Float32Array(n * 3);
    for (let i = 0; i < n; i++) {
        valid[i] = data.readUInt8(24 + i);
    }
    for (let i = 0; i < n * 3; i++) {
        points[i] = data.readFloatLE(24 + n + i * 4);
    }
    return { frameIndex, gridWidth, gridHeight, points, valid };
}

export function predictionFileName(frameIndex: number): string {
    return `predictions-${String(frameIndex).padStart(6, "0")}.bin`;
}

/**
 * Dataset assembly: ground-truth scene-coordinate grids derived from
 * depth and pose, at 1/8 of the image resolution (the network's output
 * stride).
 */

import * as tf from "@tensorflow/tfjs";

import { Frame } from "./formats";

export const SUBSAMPLING = 8;

export interface CoordinateGrid {
    gridWidth: number;
    gridHeight: number;
    /** Row-major (gh, gw, 3) world points; zero where invalid. */
    points: Float32Array;
    /** Row-major (gh, gw); 1 where the depth pixel was valid. */
    valid: Uint8Array;
}

/** Back-projects the frame's depth at every grid pixel into world space. */
export function groundTruthGrid(frame: Frame): CoordinateGrid {
    const gw = Math.floor(frame.width / SUBSAMPLING);
    const gh = Math.floor(frame.height / SUBSAMPLING);
    const points = new Float32Array(gw * gh * 3);
    const valid = new Uint8Array(gw * gh);
    const { fx, fy, cx, cy } = frame.intrinsics;
    const m = frame.pose;
    for (let gy = 0; gy < gh; gy++) {
        for (let gx = 0; gx < gw; gx++) {
            const px = gx * SUBSAMPLING;
            const py = gy * SUBSAMPLING;
            const d = frame.depth[py * frame.width + px];
            const i = gy * gw + gx;
            if (d <= 0) {
                continue;
            }
            const xc = ((px - cx) / fx) * d;
            const yc = ((py - cy) / fy) * d;
            points[i * 3 + 0] = m[0] * xc + m[1] * yc + m[2] * d + m[3];
            points[i * 3 + 1] = m[4] * xc + m[5] * yc + m[6] * d + m[7];
            points[i * 3 + 2] = m[8] * xc + m[9] * yc + m[10] * d + m[11];
            valid[i] = 1;
        }
    }
    return { gridWidth: gw, gridHeight: gh, points, valid };
}

export interface Dataset {
    /** (n, h, w, 3) RGB in [0, 1]. */
    inputs: tf.Tensor4D;
    /** (n, gh, gw, 3) world coordinates. */
    targets: tf.Tensor4D;
    /** (n, gh, gw, 1) validity mask. */
    masks: tf.Tensor4D;
}

export function makeDataset(frames: Frame[]): Dataset {
    if (frames.length === 0) {
        throw new Error("empty training sequence");
    }
    const { width, height } = frames[0];
    const grids = frames.map(groundTruthGrid);
    const gw = grids[0].gridWidth;
    const gh = grids[0].gridHeight;
    const inputs = tf.tensor4d(
        frames.flatMap(f => Array.from(f.rgb, v => v / 255)),
        [frames.length, height, width, 3],
    );
    const targets = tf.tensor4d(
        grids.flatMap(g => Array.from(g.points)),
        [frames.length, gh, gw, 3],
    );
    const masks = tf.tensor4d(
        grids.flatMap(g => Array.from(g.valid, v => (v ? 1 : 0))),
        [frames.length, gh, gw, 1],
    );
    return { inputs, targets, masks };
}

export function disposeDataset(dataset: Dataset): void {
    dataset.inputs.dispose();
    dataset.targets.dispose();
    dataset.masks.dispose();
}

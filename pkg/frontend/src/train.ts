/**
 * Training loop: Adam with an initial learning rate of 1e-4, dropped by
 * a factor of 10 whenever the monitored loss has not improved for 10
 * epochs, up to 160 epochs. Predictions are exported every 5 epochs so
 * downstream evaluation can trace performance against training time.
 */

import * as fs from "fs";
import * as path from "path";

import * as tf from "@tensorflow/tfjs";

import { Dataset, disposeDataset, makeDataset } from "./data";
import { Frame, predictionFileName, writePredictionFile } from "./formats";
import { maskedEuclideanLoss } from "./loss";
import { buildNetwork, NetworkOptions } from "./model";

export interface TrainerConfig {
    learningRate: number;
    lrDropFactor: number;
    patienceEpochs: number;
    maxEpochs: number;
    batchSize: number;
    seed: number;
    checkpointInterval: number;
}

export const DEFAULT_CONFIG: TrainerConfig = {
    learningRate: 1e-4,
    lrDropFactor: 10,
    patienceEpochs: 10,
    maxEpochs: 160,
    batchSize: 4,
    seed: 0,
    checkpointInterval: 5,
};

export class DivergenceError extends Error {}

export function validateConfig(cfg: TrainerConfig): void {
    const positive: Array<[string, number]> = [
        ["learningRate", cfg.learningRate],
        ["lrDropFactor", cfg.lrDropFactor],
        ["patienceEpochs", cfg.patienceEpochs],
        ["maxEpochs", cfg.maxEpochs],
        ["batchSize", cfg.batchSize],
        ["checkpointInterval", cfg.checkpointInterval],
    ];
    for (const [name, value] of positive) {
        if (!(value > 0)) {
            throw new Error(`${name} must be positive, got ${value}`);
        }
    }
    if (cfg.patienceEpochs >= cfg.maxEpochs) {
        throw new Error("patienceEpochs must be below maxEpochs");
    }
}

export interface EpochRecord {
    epoch: number;
    loss: number;
    learningRate: number;
}

export interface TrainResult {
    model: tf.LayersModel;
    history: EpochRecord[];
    /** Directories holding the per-checkpoint prediction exports. */
    checkpointDirs: string[];
}

export function exportPredictions(
    model: tf.LayersModel,
    frames: Frame[],
    outDir: string,
): string[] {
    fs.mkdirSync(outDir, { recursive: true });
    const written: string[] = [];
    for (const frame of frames) {
        const grid = tf.tidy(() => {
            const input = tf
                .tensor(Array.from(frame.rgb, v => v / 255), [
                    1,
                    frame.height,
                    frame.width,
                    3,
                ]);
            return model.predict(input) as tf.Tensor4D;
        });
        const [, gh, gw] = grid.shape.slice(0, 3);
        const points = new Float32Array(grid.dataSync());
        grid.dispose();
        const valid = new Uint8Array(gw * gh).fill(1);
        const filePath = path.join(outDir, predictionFileName(frame.index));
        writePredictionFile(filePath, {
            frameIndex: frame.index,
            gridWidth: gw,
            gridHeight: gh,
            points,
            valid,
        });
        written.push(filePath);
    }
    return written;
}

export interface TrainOptions {
    network?: NetworkOptions;
    /** Root directory for checkpoint prediction exports; omit to skip. */
    checkpointRoot?: string;
    onEpoch?: (record: EpochRecord) => void;
}

export async function train(
    frames: Frame[],
    cfg: TrainerConfig,
    options: TrainOptions = {},
): Promise<TrainResult> {
    validateConfig(cfg);
    const dataset: Dataset = makeDataset(frames);
    const model = buildNetwork(options.network ?? {});
    let learningRate = cfg.learningRate;
    let optimizer = tf.train.adam(learningRate);
    const history: EpochRecord[] = [];
    const checkpointDirs: string[] = [];
    let best = Infinity;
    let sinceImprovement = 0;

    try {
        const n = frames.length;
        for (let epoch = 1; epoch <= cfg.maxEpochs; epoch++) {
            let epochLoss = 0;
            let batches = 0;
            for (let start = 0; start < n; start += cfg.batchSize) {
                const end = Math.min(start + cfg.batchSize, n);
                const lossValue = tf.tidy(() => {
                    const loss = optimizer.minimize(
                        () => {
                            const inputs = dataset.inputs.slice(
                                [start, 0, 0, 0],
                                [end - start, -1, -1, -1],
                            );
                            const targets = dataset.targets.slice(
                                [start, 0, 0, 0],
                                [end - start, -1, -1, -1],
                            );
                            const masks = dataset.masks.slice(
                                [start, 0, 0, 0],
                                [end - start, -1, -1, -1],
                            );
                            const predicted = model.apply(inputs, {
                                training: true,
                            }) as tf.Tensor4D;
                            return maskedEuclideanLoss(
                                predicted,
                                targets,
                                masks,
                            );
                        },
                        true,
                    ) as tf.Scalar;
                    return loss.dataSync()[0];
                });
                if (!Number.isFinite(lossValue)) {
                    throw new DivergenceError(
                        `non-finite loss at epoch ${epoch}`,
                    );
                }
                epochLoss += lossValue;
                batches += 1;
            }
            const meanLoss = epochLoss / Math.max(batches, 1);
            const record = { epoch, loss: meanLoss, learningRate };
            history.push(record);
            options.onEpoch?.(record);

            if (meanLoss < best - 1e-12) {
                best = meanLoss;
                sinceImprovement = 0;
            } else {
                sinceImprovement += 1;
                if (sinceImprovement >= cfg.patienceEpochs) {
                    learningRate /= cfg.lrDropFactor;
                    optimizer.dispose();
                    optimizer = tf.train.adam(learningRate);
                    sinceImprovement = 0;
                }
            }

            if (
                options.checkpointRoot &&
                epoch % cfg.checkpointInterval === 0
            ) {
                const dir = path.join(
                    options.checkpointRoot,
                    `epoch-${String(epoch).padStart(4, "0")}`,
                );
                exportPredictions(model, frames, dir);
                checkpointDirs.push(dir);
            }
        }
    } finally {
        disposeDataset(dataset);
        optimizer.dispose();
    }
    return { model, history, checkpointDirs };
}

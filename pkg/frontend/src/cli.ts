/**
 * Command-line entry point: train on a native sequence directory and
 * export prediction files (plus optional 5-epoch checkpoints).
 */

import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { readSequence } from "./formats";
import { DEFAULT_CONFIG, exportPredictions, train } from "./train";

async function main(): Promise<void> {
    const argv = await yargs(hideBin(process.argv))
        .command("train", "train and export predictions")
        .option("sequence", {
            type: "string",
            demandOption: true,
            describe: "native sequence directory",
        })
        .option("out", {
            type: "string",
            demandOption: true,
            describe: "output directory for final predictions",
        })
        .option("checkpoints", {
            type: "string",
            describe: "root directory for 5-epoch checkpoint exports",
        })
        .option("epochs", {
            type: "number",
            default: DEFAULT_CONFIG.maxEpochs,
        })
        .option("batch-size", {
            type: "number",
            default: DEFAULT_CONFIG.batchSize,
        })
        .option("lr", { type: "number", default: DEFAULT_CONFIG.learningRate })
        .option("patience", {
            type: "number",
            describe:
                "epochs without improvement before the learning-rate " +
                "drop; defaults to 10, capped below the epoch count",
        })
        .option("channel-scale", {
            type: "number",
            default: 1,
            describe: "multiplier on network channel widths",
        })
        .option("seed", { type: "number", default: 0 })
        .strict()
        .parse();

    const frames = readSequence(argv.sequence);
    console.log(`loaded ${frames.length} frames from ${argv.sequence}`);
    const cfg = {
        ...DEFAULT_CONFIG,
        maxEpochs: argv.epochs,
        batchSize: argv["batch-size"],
        learningRate: argv.lr,
        patienceEpochs:
            argv.patience ??
            Math.max(
                1,
                Math.min(DEFAULT_CONFIG.patienceEpochs, argv.epochs - 1),
            ),
        seed: argv.seed,
    };
    const result = await train(frames, cfg, {
        network: { channelScale: argv["channel-scale"] },
        checkpointRoot: argv.checkpoints,
        onEpoch: r =>
            console.log(
                `epoch ${r.epoch}: loss ${r.loss.toFixed(6)} ` +
                    `(lr ${r.learningRate})`,
            ),
    });
    const files = exportPredictions(result.model, frames, argv.out);
    console.log(`wrote ${files.length} prediction files to ${argv.out}`);
}

main().catch(error => {
    console.error(error);
    process.exit(1);
});

/**
 * The regression network: a truncated VGG-16 feature extractor with
 * batch normalisation, where strided (stride-2) convolutions replace
 * the pooling layers, cut after three rounds of downsampling, followed
 * by a 1x1 regression head 512 -> 4096 -> 4096 -> 3.
 *
 * Output spatial size is input/8 in each dimension with 3 channels
 * (one world coordinate per grid pixel).
 */

import * as tf from "@tensorflow/tfjs";

export interface NetworkOptions {
    /**
     * Multiplier on every channel width. 1 is the published structure;
     * tests use small fractions to keep CPU training fast.
     */
    channelScale?: number;
}

function convBnRelu(
    x: tf.SymbolicTensor,
    filters: number,
    stride: number,
): tf.SymbolicTensor {
    let y = tf.layers
        .conv2d({
            filters,
            kernelSize: 3,
            strides: stride,
            padding: "same",
            useBias: false,
        })
        .apply(x) as tf.SymbolicTensor;
    y = tf.layers.batchNormalization().apply(y) as tf.SymbolicTensor;
    return tf.layers.reLU().apply(y) as tf.SymbolicTensor;
}

export function buildNetwork(options: NetworkOptions = {}): tf.LayersModel {
    const scale = options.channelScale ?? 1;
    const width = (c: number) => Math.max(1, Math.round(c * scale));

    const input = tf.input({ shape: [null, null, 3] });
    let x = input as tf.SymbolicTensor;

    // VGG-16 blocks 1-4; the last conv of blocks 1-3 is strided in
    // place of the pooling layer (three rounds of downsampling).
    x = convBnRelu(x, width(64), 1);
    x = convBnRelu(x, width(64), 2);
    x = convBnRelu(x, width(128), 1);
    x = convBnRelu(x, width(128), 2);
    x = convBnRelu(x, width(256), 1);
    x = convBnRelu(x, width(256), 1);
    x = convBnRelu(x, width(256), 2);
    x = convBnRelu(x, width(512), 1);
    x = convBnRelu(x, width(512), 1);
    x = convBnRelu(x, width(512), 1);

    // 1x1 regression head.
    x = tf.layers
        .conv2d({ filters: width(4096), kernelSize: 1, activation: "relu" })
        .apply(x) as tf.SymbolicTensor;
    x = tf.layers
        .conv2d({ filters: width(4096), kernelSize: 1, activation: "relu" })
        .apply(x) as tf.SymbolicTensor;
    const output = tf.layers
        .conv2d({ filters: 3, kernelSize: 1 })
        .apply(x) as tf.SymbolicTensor;

    return tf.model({ inputs: input, outputs: output });
}

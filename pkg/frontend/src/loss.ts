/**
 * Masked mean-Euclidean regression loss: the average distance between
 * predicted and ground-truth world points over valid grid pixels.
 * Pixels with invalid depth carry zero weight, so a frame with no valid
 * pixels contributes a loss of exactly zero.
 */

import * as tf from "@tensorflow/tfjs";

export function maskedEuclideanLoss(
    predictions: tf.Tensor4D,
    targets: tf.Tensor4D,
    masks: tf.Tensor4D,
): tf.Scalar {
    return tf.tidy(() => {
        const squared = tf.sum(tf.square(tf.sub(predictions, targets)), -1, true);
        const distances = tf.sqrt(tf.add(squared, 1e-12));
        const weighted = tf.sum(tf.mul(distances, masks));
        const count = tf.sum(masks);
        // No valid pixels anywhere: define the loss as zero rather
        // than 0/0.
        return tf.where(
            tf.greater(count, 0),
            tf.div(weighted, tf.maximum(count, 1)),
            tf.zeros([]),
        ) as tf.Scalar;
    });
}

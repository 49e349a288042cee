/**
 * Standard backbone preprocessing: scale to a square `resizeEdge`,
 * crop to `cropSize` (center by default, seeded-random under
 * augmentation with an optional horizontal flip), scale to [0, 1] and
 * standardize with the usual ImageNet statistics.
 */

import * as tf from '@tensorflow/tfjs';
import type { RgbImage } from './images.js';
import type { Rng } from './prng.js';

export const IMAGENET_MEAN = [0.485, 0.456, 0.406];
export const IMAGENET_STD = [0.229, 0.224, 0.225];

export interface PreprocessOptions {
  resizeEdge: number;
  cropSize: number;
  augment?: boolean;
  rng?: Rng;
}

export function toInputTensor(image: RgbImage, opts: PreprocessOptions): tf.Tensor3D {
  const { resizeEdge, cropSize, augment = false, rng } = opts;
  if (cropSize > resizeEdge) {
    throw new Error(`crop size ${cropSize} exceeds resize edge ${resizeEdge}`);
  }
  if (augment && !rng) {
    throw new Error('augmentation requires a seeded rng');
  }
  return tf.tidy(() => {
    let x = tf.tensor3d(image.data, [image.height, image.width, 3], 'int32').toFloat();
    x = tf.image.resizeBilinear(x as tf.Tensor3D, [resizeEdge, resizeEdge]);

    const slack = resizeEdge - cropSize;
    let top = Math.floor(slack / 2);
    let left = Math.floor(slack / 2);
    if (augment && rng) {
      top = Math.floor(rng() * (slack + 1));
      left = Math.floor(rng() * (slack + 1));
    }
    x = tf.slice(x as tf.Tensor3D, [top, left, 0], [cropSize, cropSize, 3]);
    if (augment && rng && rng() < 0.5) {
      x = tf.reverse(x as tf.Tensor3D, 1);
    }

    const scaled = tf.div(x, 255.0);
    const mean = tf.tensor1d(IMAGENET_MEAN);
    const std = tf.tensor1d(IMAGENET_STD);
    return tf.div(tf.sub(scaled, mean), std) as tf.Tensor3D;
  });
}

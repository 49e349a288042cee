/**
 * Backbone abstraction over the image CNN that produces the feature
 * vector for each painting.
 *
 * Two implementations:
 *  - a tfjs model exported to disk (`path/to/model.json`), used for real
 *    pretrained backbones (e.g. a headless ResNet/MobileNet conversion);
 *    the model's output is taken as the penultimate feature vector.
 *  - `tiny:<seed>` -- a small fixed-weight CNN whose parameters are
 *    generated from the seed. It is not pretrained; it exists so the
 *    pipeline, file format and determinism can be exercised end to end
 *    without downloading weights, and as a template for custom nets.
 */

import { readFileSync } from 'fs';
import { dirname, join } from 'path';
import * as tf from '@tensorflow/tfjs';
import { mulberry32, deriveSeed } from './prng.js';

export interface Backbone {
  name: string;
  dim: number;
  forward(batch: tf.Tensor4D): tf.Tensor2D;
  dispose(): void;
}

export async function resolveBackbone(spec: string, dim: number): Promise<Backbone> {
  if (spec.startsWith('tiny:')) {
    const seed = Number.parseInt(spec.slice('tiny:'.length), 10);
    if (!Number.isFinite(seed)) {
      throw new Error(`bad tiny backbone spec ${spec}; expected tiny:<seed>`);
    }
    return new TinyBackbone(seed, dim);
  }
  if (spec.endsWith('.json')) {
    return loadTfjsBackbone(spec);
  }
  throw new Error(`unknown backbone ${spec}; use tiny:<seed> or a path to a tfjs model.json`);
}

class TinyBackbone implements Backbone {
  readonly name: string;
  readonly dim: number;
  private readonly conv1: tf.Tensor4D;
  private readonly bias1: tf.Tensor1D;
  private readonly conv2: tf.Tensor4D;
  private readonly bias2: tf.Tensor1D;
  private readonly dense: tf.Tensor2D;
  private readonly bias3: tf.Tensor1D;

  constructor(seed: number, dim: number) {
    this.name = `tiny:${seed}`;
    this.dim = dim;
    const c1 = 8;
    const c2 = 16;
    this.conv1 = this.init([3, 3, 3, c1], deriveSeed(seed, 'conv1'));
    this.bias1 = this.init([c1], deriveSeed(seed, 'bias1'));
    this.conv2 = this.init([3, 3, c1, c2], deriveSeed(seed, 'conv2'));
    this.bias2 = this.init([c2], deriveSeed(seed, 'bias2'));
    this.dense = this.init([c2, dim], deriveSeed(seed, 'dense'));
    this.bias3 = this.init([dim], deriveSeed(seed, 'bias3'));
  }

  private init<R extends tf.Rank>(shape: number[], seed: number): tf.Tensor<R> {
    const rng = mulberry32(seed);
    const fanIn = shape.slice(0, -1).reduce((a, b) => a * b, 1);
    const limit = Math.sqrt(3.0 / Math.max(fanIn, 1));
    const values = new Float32Array(shape.reduce((a, b) => a * b, 1));
    for (let i = 0; i < values.length; i++) {
      values[i] = (2 * rng() - 1) * limit;
    }
    return tf.tensor(values, shape as tf.ShapeMap[R]);
  }

  forward(batch: tf.Tensor4D): tf.Tensor2D {
    return tf.tidy(() => {
      let x = tf.conv2d(batch, this.conv1 as tf.Tensor4D, 2, 'same');
      x = tf.relu(tf.add(x, this.bias1));
      x = tf.maxPool(x as tf.Tensor4D, 2, 2, 'same');
      x = tf.conv2d(x as tf.Tensor4D, this.conv2 as tf.Tensor4D, 2, 'same');
      x = tf.relu(tf.add(x, this.bias2));
      const pooled = tf.mean(x, [1, 2]) as tf.Tensor2D;
      return tf.add(tf.matMul(pooled, this.dense), this.bias3) as tf.Tensor2D;
    });
  }

  dispose(): void {
    this.conv1.dispose();
    this.bias1.dispose();
    this.conv2.dispose();
    this.bias2.dispose();
    this.dense.dispose();
    this.bias3.dispose();
  }
}

/** Load a tfjs LayersModel from the local filesystem (model.json + shards). */
export async function loadTfjsBackbone(modelJsonPath: string): Promise<Backbone> {
  const modelDir = dirname(modelJsonPath);
  const modelJson = JSON.parse(readFileSync(modelJsonPath, 'utf-8'));
  const manifest = modelJson.weightsManifest ?? [];
  const specs: tf.io.WeightsManifestEntry[] = [];
  const buffers: Buffer[] = [];
  for (const group of manifest) {
    specs.push(...group.weights);
    for (const path of group.paths) {
      buffers.push(readFileSync(join(modelDir, path)));
    }
  }
  const weightData = Buffer.concat(buffers);
  const model = await tf.loadLayersModel(
    tf.io.fromMemory({
      modelTopology: modelJson.modelTopology,
      weightSpecs: specs,
      weightData: weightData.buffer.slice(
        weightData.byteOffset,
        weightData.byteOffset + weightData.byteLength,
      ),
    }),
  );
  const outShape = model.outputs[0].shape;
  const dim = outShape[outShape.length - 1];
  if (typeof dim !== 'number') {
    throw new Error(`model output dim is not static: ${JSON.stringify(outShape)}`);
  }
  return {
    name: modelJsonPath,
    dim,
    forward: (batch: tf.Tensor4D) => {
      const out = model.predict(batch) as tf.Tensor;
      return out.reshape([batch.shape[0], dim]) as tf.Tensor2D;
    },
    dispose: () => model.dispose(),
  };
}

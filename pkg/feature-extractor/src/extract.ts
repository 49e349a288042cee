/**
 * Extraction pipeline: metadata rows -> decode -> preprocess -> backbone
 * -> ARTCTXF1 file, written in metadata order.
 *
 * Without augmentation the preprocessing is a deterministic center crop,
 * so two runs produce bit-identical files. With `--augment`, crops and
 * flips come from a per-image seeded stream; `multiCrop > 1` averages
 * that many augmented crops per image.
 */

import { existsSync, mkdirSync, renameSync, writeFileSync } from 'fs';
import { dirname, join } from 'path';
import * as tf from '@tensorflow/tfjs';
import { encodeFeatureFile, FeatureEntry } from './artctxf.js';
import { resolveBackbone } from './backbone.js';
import { decodeImage } from './images.js';
import { MetadataRow, parseMetadata } from './metadata.js';
import { toInputTensor } from './preprocess.js';
import { deriveSeed, mulberry32 } from './prng.js';

export interface ExtractionConfig {
  imageDir: string;
  metadataFile: string;
  outputPath: string;
  backbone: string;
  dim: number;
  resizeEdge: number;
  cropSize: number;
  augment: boolean;
  multiCrop: number;
  seed: number;
  allowMissing: boolean;
  delimiter: string;
}

export const DEFAULT_CONFIG: Omit<ExtractionConfig, 'imageDir' | 'metadataFile' | 'outputPath'> = {
  backbone: 'tiny:0',
  dim: 64,
  resizeEdge: 256,
  cropSize: 224,
  augment: false,
  multiCrop: 1,
  seed: 0,
  allowMissing: false,
  delimiter: '\t',
};

export interface ExtractionResult {
  written: number;
  missing: string[];
}

export async function extract(config: ExtractionConfig): Promise<ExtractionResult> {
  if (config.cropSize > config.resizeEdge) {
    throw new Error(`crop size ${config.cropSize} exceeds resize edge ${config.resizeEdge}`);
  }
  if (config.multiCrop < 1) {
    throw new Error('multiCrop must be >= 1');
  }
  if (config.multiCrop > 1 && !config.augment) {
    throw new Error('multiCrop needs --augment (averages random crops)');
  }
  const rows = parseMetadata(config.metadataFile, config.delimiter);
  const backbone = await resolveBackbone(config.backbone, config.dim);
  try {
    const entries: FeatureEntry[] = [];
    const missing: string[] = [];
    for (const row of rows) {
      const imagePath = join(config.imageDir, row.imageRef);
      if (!existsSync(imagePath)) {
        missing.push(row.imageRef);
        continue;
      }
      entries.push({ id: row.id, values: embedOne(backbone, imagePath, row, config) });
    }
    const payload = encodeFeatureFile(entries, backbone.dim);
    mkdirSync(dirname(config.outputPath), { recursive: true });
    const tmp = `${config.outputPath}.tmp.${process.pid}`;
    writeFileSync(tmp, payload);
    renameSync(tmp, config.outputPath);
    return { written: entries.length, missing };
  } finally {
    backbone.dispose();
  }
}

function embedOne(
  backbone: { dim: number; forward(batch: tf.Tensor4D): tf.Tensor2D },
  imagePath: string,
  row: MetadataRow,
  config: ExtractionConfig,
): Float32Array {
  const image = decodeImage(imagePath);
  const rng = config.augment
    ? mulberry32(deriveSeed(config.seed, `crop:${row.id}`))
    : undefined;
  const crops = config.augment ? config.multiCrop : 1;
  const sum = new Float64Array(backbone.dim);
  for (let c = 0; c < crops; c++) {
    const values = tf.tidy(() => {
      const input = toInputTensor(image, {
        resizeEdge: config.resizeEdge,
        cropSize: config.cropSize,
        augment: config.augment,
        rng,
      });
      const out = backbone.forward(input.expandDims(0) as tf.Tensor4D);
      return out.dataSync() as Float32Array;
    });
    for (let d = 0; d < backbone.dim; d++) {
      sum[d] += values[d];
    }
  }
  const mean = new Float32Array(backbone.dim);
  for (let d = 0; d < backbone.dim; d++) {
    mean[d] = sum[d] / crops;
  }
  return mean;
}

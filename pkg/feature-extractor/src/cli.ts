#!/usr/bin/env node
/** Command line for the feature extractor. */

import yargs from 'yargs';
import { hideBin } from 'yargs/helpers';
import { DEFAULT_CONFIG, extract } from './extract.js';

export async function main(argv: string[]): Promise<number> {
  const args = await yargs(argv)
    .scriptName('artctx-extract')
    .usage('$0 --images DIR --metadata FILE --output FILE [options]')
    .option('images', { type: 'string', demandOption: true, describe: 'image directory' })
    .option('metadata', { type: 'string', demandOption: true, describe: 'delimited metadata file' })
    .option('output', { type: 'string', demandOption: true, describe: 'output ARTCTXF1 file' })
    .option('backbone', {
      type: 'string',
      default: DEFAULT_CONFIG.backbone,
      describe: 'tiny:<seed> or path to a tfjs model.json',
    })
    .option('dim', { type: 'number', default: DEFAULT_CONFIG.dim, describe: 'feature dim (tiny backbone only)' })
    .option('resize', { type: 'number', default: DEFAULT_CONFIG.resizeEdge, describe: 'square resize edge' })
    .option('crop', { type: 'number', default: DEFAULT_CONFIG.cropSize, describe: 'crop size' })
    .option('augment', { type: 'boolean', default: false, describe: 'random crop + horizontal flip' })
    .option('multi-crop', { type: 'number', default: 1, describe: 'average this many augmented crops' })
    .option('seed', { type: 'number', default: 0, describe: 'seed for augmented crops' })
    .option('allow-missing', { type: 'boolean', default: false, describe: 'exit 0 even when images are missing' })
    .option('delimiter', { type: 'string', default: '\t', describe: 'metadata field delimiter' })
    .strict()
    .parse();

  const result = await extract({
    imageDir: args.images,
    metadataFile: args.metadata,
    outputPath: args.output,
    backbone: args.backbone,
    dim: args.dim,
    resizeEdge: args.resize,
    cropSize: args.crop,
    augment: args.augment,
    multiCrop: args['multi-crop'],
    seed: args.seed,
    allowMissing: args['allow-missing'],
    delimiter: args.delimiter,
  });

  console.log(`wrote ${result.written} feature vectors to ${args.output}`);
  if (result.missing.length > 0) {
    console.error(`missing ${result.missing.length} image(s), skipped:`);
    for (const ref of result.missing) {
      console.error(`  ${ref}`);
    }
    if (!args['allow-missing']) {
      return 2;
    }
  }
  return 0;
}

const isDirectRun = process.argv[1] && import.meta.url.endsWith(process.argv[1].split('/').pop() ?? '');
if (isDirectRun) {
  main(hideBin(process.argv))
    .then((code) => process.exit(code))
    .catch((err) => {
      console.error(`error: ${err.message}`);
      process.exit(1);
    });
}

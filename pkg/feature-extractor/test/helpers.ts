/** Shared test utilities: synthetic images and metadata files. */

import { mkdirSync, writeFileSync } from 'fs';
import { join } from 'path';
import { PNG } from 'pngjs';

export function writePng(path: string, width: number, height: number, salt: number): void {
  const png = new PNG({ width, height });
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const i = (y * width + x) << 2;
      png.data[i] = (x * 7 + salt * 31) % 256;
      png.data[i + 1] = (y * 13 + salt * 17) % 256;
      png.data[i + 2] = (x + y + salt) % 256;
      png.data[i + 3] = 255;
    }
  }
  writeFileSync(path, PNG.sync.write(png));
}

export function writeFixtureDataset(
  root: string,
  names: string[],
  opts: { skipImages?: string[] } = {},
): { imageDir: string; metadataFile: string } {
  const imageDir = join(root, 'images');
  mkdirSync(imageDir, { recursive: true });
  names.forEach((name, i) => {
    if (!(opts.skipImages ?? []).includes(name)) {
      writePng(join(imageDir, name), 48, 40, i + 1);
    }
  });
  const header = 'image_file\tauthor\ttitle\tdate\ttechnique\ttype\tschool\ttimeframe\tdescription';
  const rows = names.map((n, i) => `${n}\tA${i}\tT${i}\td\ttech\tportrait\tS\t1601-1650\tc${i}`);
  const metadataFile = join(root, 'meta.tsv');
  writeFileSync(metadataFile, [header, ...rows].join('\n') + '\n');
  return { imageDir, metadataFile };
}

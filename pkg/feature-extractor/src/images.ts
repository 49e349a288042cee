/** Image decoding to raw RGB. PNG and JPEG via pure-JS codecs, plus
 * binary PPM (P6) as a zero-dependency escape hatch for pipelines that
 * pre-convert. */

import { readFileSync } from 'fs';
import { PNG } from 'pngjs';
import jpeg from 'jpeg-js';

export interface RgbImage {
  width: number;
  height: number;
  /** Row-major RGB, 3 bytes per pixel. */
  data: Uint8Array;
}

export function decodeImage(path: string): RgbImage {
  const raw = readFileSync(path);
  if (raw.length >= 8 && raw.readUInt32BE(0) === 0x89504e47) {
    return fromRgba(PNG.sync.read(raw));
  }
  if (raw.length >= 2 && raw[0] === 0xff && raw[1] === 0xd8) {
    return fromRgba(jpeg.decode(raw, { useTArray: true, formatAsRGBA: true }));
  }
  if (raw.length >= 2 && raw[0] === 0x50 && raw[1] === 0x36) {
    return decodePpm(raw);
  }
  throw new Error(`unsupported image format: ${path}`);
}

function fromRgba(img: { width: number; height: number; data: Uint8Array | Buffer }): RgbImage {
  const n = img.width * img.height;
  const rgb = new Uint8Array(n * 3);
  for (let i = 0; i < n; i++) {
    rgb[3 * i] = img.data[4 * i];
    rgb[3 * i + 1] = img.data[4 * i + 1];
    rgb[3 * i + 2] = img.data[4 * i + 2];
  }
  return { width: img.width, height: img.height, data: rgb };
}

function decodePpm(raw: Buffer): RgbImage {
  // P6 header: magic, width, height, maxval, single whitespace, then pixels.
  let pos = 2;
  const fields: number[] = [];
  while (fields.length < 3) {
    while (pos < raw.length && isSpace(raw[pos])) pos++;
    if (raw[pos] === 0x23) {
      while (pos < raw.length && raw[pos] !== 0x0a) pos++;
      continue;
    }
    let start = pos;
    while (pos < raw.length && !isSpace(raw[pos])) pos++;
    fields.push(parseInt(raw.subarray(start, pos).toString('ascii'), 10));
  }
  pos++; // single whitespace after maxval
  const [width, height, maxval] = fields;
  if (!(width > 0 && height > 0) || maxval !== 255) {
    throw new Error('unsupported PPM variant (need P6 with maxval 255)');
  }
  const expected = width * height * 3;
  const data = raw.subarray(pos, pos + expected);
  if (data.length !== expected) {
    throw new Error('truncated PPM payload');
  }
  return { width, height, data: new Uint8Array(data) };
}

function isSpace(byte: number): boolean {
  return byte === 0x20 || byte === 0x09 || byte === 0x0a || byte === 0x0d;
}

import { readFileSync } from 'fs';
import { join, dirname } from 'path';
import { fileURLToPath } from 'url';
import { describe, expect, it } from 'vitest';
import { decodeFeatureFile, encodeFeatureFile, FEATURE_MAGIC } from '../src/artctxf.js';

const GOLDEN = join(dirname(fileURLToPath(import.meta.url)), '..', 'testdata', 'golden.artctxf');

describe('feature container', () => {
  it('round-trips entries bit-exactly', () => {
    const entries = [
      { id: 'p1', values: new Float32Array([1.5, -2.25, 0.0009765625]) },
      { id: 'painting with spaces é', values: new Float32Array([0, -0, 3.5]) },
    ];
    const buffer = encodeFeatureFile(entries, 3);
    const back = decodeFeatureFile(buffer);
    expect(back.dim).toBe(3);
    expect(back.entries.map((e) => e.id)).toEqual(entries.map((e) => e.id));
    back.entries.forEach((entry, i) => {
      expect(Buffer.from(entry.values.buffer)).toEqual(Buffer.from(entries[i].values.buffer));
    });
  });

  it('reads the golden fixture produced by the consumer toolkit', () => {
    const back = decodeFeatureFile(readFileSync(GOLDEN));
    expect(back.dim).toBe(4);
    expect(back.entries.map((e) => e.id)).toEqual(['p1', 'p2']);
    expect(Array.from(back.entries[0].values)).toEqual([1.0, 2.0, -3.5, 0.25]);
    expect(Array.from(back.entries[1].values)).toEqual([0.5, -1.25, 8.0, 0.0009765625]);
  });

  it('writes bytes identical to the golden fixture for the same content', () => {
    const entries = [
      { id: 'p1', values: new Float32Array([1.0, 2.0, -3.5, 0.25]) },
      { id: 'p2', values: new Float32Array([0.5, -1.25, 8.0, 0.0009765625]) },
    ];
    expect(encodeFeatureFile(entries, 4)).toEqual(readFileSync(GOLDEN));
  });

  it('rejects a wrong magic', () => {
    const buffer = encodeFeatureFile([{ id: 'a', values: new Float32Array([1]) }], 1);
    buffer.write('NOTMAGIC', 0, 'ascii');
    expect(() => decodeFeatureFile(buffer)).toThrow(/magic/);
    expect(FEATURE_MAGIC).toBe('ARTCTXF1');
  });

  it('rejects truncated payloads and trailing bytes', () => {
    const buffer = encodeFeatureFile([{ id: 'ab', values: new Float32Array([1, 2]) }], 2);
    expect(() => decodeFeatureFile(buffer.subarray(0, buffer.length - 3))).toThrow(/ended/);
    expect(() => decodeFeatureFile(Buffer.concat([buffer, Buffer.from('x')]))).toThrow(/trailing/);
  });

  it('rejects dim mismatches at encode time', () => {
    expect(() =>
      encodeFeatureFile([{ id: 'a', values: new Float32Array([1, 2, 3]) }], 2),
    ).toThrow(/expected 2/);
  });
});

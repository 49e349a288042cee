import { mkdtempSync, writeFileSync } from 'fs';
import { tmpdir } from 'os';
import { join } from 'path';
import { describe, expect, it } from 'vitest';
import { parseMetadata } from '../src/metadata.js';

function writeTemp(content: string): string {
  const dir = mkdtempSync(join(tmpdir(), 'meta-'));
  const path = join(dir, 'meta.tsv');
  writeFileSync(path, content);
  return path;
}

describe('metadata parsing', () => {
  it('reads ids in file order from image_file', () => {
    const path = writeTemp('image_file\tauthor\nb.jpg\tX\na.jpg\tY\n');
    const rows = parseMetadata(path);
    expect(rows.map((r) => r.id)).toEqual(['b.jpg', 'a.jpg']);
    expect(rows[0].imageRef).toBe('b.jpg');
  });

  it('prefers an explicit image_ref column', () => {
    const path = writeTemp('id\timage_ref\np1\tdir/p1.png\n');
    const rows = parseMetadata(path);
    expect(rows[0]).toEqual({ id: 'p1', imageRef: 'dir/p1.png' });
  });

  it('rejects duplicate ids', () => {
    const path = writeTemp('image_file\na.jpg\na.jpg\n');
    expect(() => parseMetadata(path)).toThrow(/duplicate/);
  });

  it('rejects a header without an id column', () => {
    const path = writeTemp('author\ttitle\nX\tT\n');
    expect(() => parseMetadata(path)).toThrow(/id column/);
  });

  it('rejects an empty file', () => {
    const path = writeTemp('');
    expect(() => parseMetadata(path)).toThrow(/empty/);
  });

  it('supports a custom delimiter', () => {
    const path = writeTemp('image_file,author\na.jpg,X\n');
    expect(parseMetadata(path, ',')[0].id).toBe('a.jpg');
  });
});

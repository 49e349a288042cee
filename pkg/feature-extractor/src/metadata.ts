/**
 * Dataset metadata parsing: delimited text with a header row, same
 * column-alias rules as the consumer toolkit (`id`/`image_file` for the
 * painting id, `image_ref`/`image_file` for the image path).
 */

import { readFileSync } from 'fs';

export interface MetadataRow {
  id: string;
  imageRef: string;
}

export function parseMetadata(path: string, delimiter = '\t'): MetadataRow[] {
  const text = readFileSync(path, 'utf-8');
  const lines = text.split('\n').filter((line) => line.trim().length > 0);
  if (lines.length === 0) {
    throw new Error(`metadata file is empty: ${path}`);
  }
  const header = lines[0].split(delimiter).map((h) => h.trim().toLowerCase());
  const idCol = firstIndex(header, ['id', 'image_file']);
  if (idCol < 0) {
    throw new Error(`metadata header is missing an id column (id or image_file): ${path}`);
  }
  const refCol = firstIndex(header, ['image_ref', 'image_file', 'id']);

  const rows: MetadataRow[] = [];
  const seen = new Set<string>();
  for (const line of lines.slice(1)) {
    const cells = line.split(delimiter);
    const id = (cells[idCol] ?? '').trim();
    if (!id) {
      continue;
    }
    if (seen.has(id)) {
      throw new Error(`duplicate painting id ${id} in ${path}`);
    }
    seen.add(id);
    const ref = (cells[refCol] ?? '').trim() || id;
    rows.push({ id, imageRef: ref });
  }
  return rows;
}

function firstIndex(header: string[], aliases: string[]): number {
  for (const alias of aliases) {
    const idx = header.indexOf(alias);
    if (idx >= 0) {
      return idx;
    }
  }
  return -1;
}

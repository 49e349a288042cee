/**
 * ARTCTXF1 binary feature container.
 *
 * Layout (little-endian): 8-byte magic "ARTCTXF1", u32 entry count,
 * u32 dim, then per entry a u16 id byte length, the UTF-8 id, and
 * `dim` float32 values. Matches the consumer toolkit's reader exactly.
 */

export const FEATURE_MAGIC = 'ARTCTXF1';

export interface FeatureEntry {
  id: string;
  values: Float32Array;
}

export function encodeFeatureFile(entries: FeatureEntry[], dim: number): Buffer {
  const chunks: Buffer[] = [];
  const header = Buffer.alloc(16);
  header.write(FEATURE_MAGIC, 0, 'ascii');
  header.writeUInt32LE(entries.length, 8);
  header.writeUInt32LE(dim, 12);
  chunks.push(header);
  for (const entry of entries) {
    if (entry.values.length !== dim) {
      throw new Error(`entry ${entry.id} has ${entry.values.length} values, expected ${dim}`);
    }
    const idBytes = Buffer.from(entry.id, 'utf-8');
    if (idBytes.length > 0xffff) {
      throw new Error(`id too long to serialize: ${entry.id}`);
    }
    const idLen = Buffer.alloc(2);
    idLen.writeUInt16LE(idBytes.length, 0);
    const payload = Buffer.alloc(4 * dim);
    for (let i = 0; i < dim; i++) {
      payload.writeFloatLE(entry.values[i], 4 * i);
    }
    chunks.push(idLen, idBytes, payload);
  }
  return Buffer.concat(chunks);
}

export function decodeFeatureFile(buffer: Buffer): { dim: number; entries: FeatureEntry[] } {
  if (buffer.length < 16) {
    throw new Error('file ended while reading header');
  }
  const magic = buffer.subarray(0, 8).toString('ascii');
  if (magic !== FEATURE_MAGIC) {
    throw new Error(`bad magic ${JSON.stringify(magic)}, expected ${FEATURE_MAGIC}`);
  }
  const count = buffer.readUInt32LE(8);
  const dim = buffer.readUInt32LE(12);
  const entries: FeatureEntry[] = [];
  let offset = 16;
  for (let i = 0; i < count; i++) {
    if (offset + 2 > buffer.length) {
      throw new Error(`file ended while reading id length of entry ${i}`);
    }
    const idLen = buffer.readUInt16LE(offset);
    offset += 2;
    if (offset + idLen + 4 * dim > buffer.length) {
      throw new Error(`file ended while reading entry ${i}`);
    }
    const id = buffer.subarray(offset, offset + idLen).toString('utf-8');
    offset += idLen;
    const values = new Float32Array(dim);
    for (let d = 0; d < dim; d++) {
      values[d] = buffer.readFloatLE(offset + 4 * d);
    }
    offset += 4 * dim;
    entries.push({ id, values });
  }
  if (offset !== buffer.length) {
    throw new Error(`unexpected trailing bytes after ${count} entries`);
  }
  return { dim, entries };
}

/**
 * Reader/writer for the engine's binary memory format (all little-endian):
 *
 *   magic "DCAP" | version u16 | flags u16 | dim u32 | count u64
 *   count * dim float32 embeddings, row-major (unit rows)
 *   count float32 prenorms (encoder norms before normalization)
 *   per entry: text byte length u32, then UTF-8 bytes
 */

import { readFileSync, renameSync, unlinkSync, writeFileSync } from 'node:fs';

export const FORMAT_VERSION = 1;
const MAGIC = 'DCAP';
const HEADER_BYTES = 20;

export interface MemoryFile {
  dim: number;
  /** unit rows, one Float32Array per entry */
  embeddings: Float32Array[];
  prenorms: Float32Array;
  texts: string[];
}

export function writeDcap(
  path: string,
  embeddings: Float32Array[],
  prenorms: ArrayLike<number>,
  texts: string[],
): void {
  const count = embeddings.length;
  if (prenorms.length !== count || texts.length !== count) {
    throw new Error(`mismatched block lengths: ${count}/${prenorms.length}/${texts.length}`);
  }
  const dim = count > 0 ? embeddings[0].length : 0;
  const header = Buffer.alloc(HEADER_BYTES);
  header.write(MAGIC, 0, 'ascii');
  header.writeUInt16LE(FORMAT_VERSION, 4);
  header.writeUInt16LE(0, 6);
  header.writeUInt32LE(dim, 8);
  header.writeBigUInt64LE(BigInt(count), 12);

  const embBlock = Buffer.alloc(count * dim * 4);
  for (let i = 0; i < count; i++) {
    if (embeddings[i].length !== dim) {
      throw new Error(`row ${i} has dimension ${embeddings[i].length}, expected ${dim}`);
    }
    for (let j = 0; j < dim; j++) {
      embBlock.writeFloatLE(embeddings[i][j], (i * dim + j) * 4);
    }
  }
  const preBlock = Buffer.alloc(count * 4);
  for (let i = 0; i < count; i++) {
    preBlock.writeFloatLE(Number(prenorms[i]), i * 4);
  }
  const textChunks: Buffer[] = [];
  for (const text of texts) {
    const data = Buffer.from(text, 'utf-8');
    const len = Buffer.alloc(4);
    len.writeUInt32LE(data.length, 0);
    textChunks.push(len, data);
  }

  const tmp = `${path}.tmp`;
  writeFileSync(tmp, Buffer.concat([header, embBlock, preBlock, ...textChunks]));
  try {
    renameSync(tmp, path);
  } catch (err) {
    unlinkSync(tmp);
    throw err;
  }
}

export function readDcap(path: string): MemoryFile {
  const blob = readFileSync(path);
  if (blob.length < 4 || blob.toString('ascii', 0, 4) !== MAGIC) {
    throw new Error(`${path}: bad magic`);
  }
  if (blob.length < HEADER_BYTES) {
    throw new Error(`${path}: truncated header`);
  }
  const version = blob.readUInt16LE(4);
  if (version !== FORMAT_VERSION) {
    throw new Error(`${path}: unsupported version ${version}`);
  }
  const dim = blob.readUInt32LE(8);
  const count = Number(blob.readBigUInt64LE(12));
  let offset = HEADER_BYTES;

  const need = (bytes: number, what: string) => {
    if (blob.length < offset + bytes) throw new Error(`${path}: truncated ${what}`);
  };

  need(count * dim * 4, 'embedding block');
  const embeddings: Float32Array[] = [];
  for (let i = 0; i < count; i++) {
    const row = new Float32Array(dim);
    for (let j = 0; j < dim; j++) {
      row[j] = blob.readFloatLE(offset + (i * dim + j) * 4);
    }
    embeddings.push(row);
  }
  offset += count * dim * 4;

  need(count * 4, 'prenorm block');
  const prenorms = new Float32Array(count);
  for (let i = 0; i < count; i++) {
    prenorms[i] = blob.readFloatLE(offset + i * 4);
  }
  offset += count * 4;

  const texts: string[] = [];
  for (let i = 0; i < count; i++) {
    need(4, 'text length');
    const len = blob.readUInt32LE(offset);
    offset += 4;
    need(len, 'text payload');
    texts.push(blob.toString('utf-8', offset, offset + len));
    offset += len;
  }
  if (offset !== blob.length) {
    throw new Error(`${path}: ${blob.length - offset} trailing bytes`);
  }
  return { dim, embeddings, prenorms, texts };
}

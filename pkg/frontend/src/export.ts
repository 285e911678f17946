/**
 * Export pipeline: run the selected encoder over texts or image files,
 * normalize, and emit the engine's DCAP layout plus a JSON manifest.
 * JSONL (raw pre-normalization embeddings) is available as a debug fallback.
 */

import { readFileSync, renameSync, unlinkSync, writeFileSync } from 'node:fs';

import { writeDcap } from './dcap.js';
import { DualEncoder, l2norm, resolveEncoder } from './encoders.js';

export interface ExportManifest {
  model: string;
  modality: 'text' | 'image';
  dim: number;
  count: number;
  normalization: {
    /** rows in the embedding block are post-normalization */
    stored: 'post';
    /** the prenorm block carries the pre-normalization norms */
    prenorm: 'pre';
  };
}

export class EncodingError extends Error {}

interface EncodedBatch {
  rows: Float32Array[];
  prenorms: Float64Array;
  /** raw pre-normalization vectors, kept for the JSONL fallback */
  raw: Float64Array[];
}

function normalizeBatch(raw: Float64Array[], dim: number): EncodedBatch {
  const rows: Float32Array[] = [];
  const prenorms = new Float64Array(raw.length);
  raw.forEach((vector, i) => {
    if (vector.length !== dim) {
      throw new EncodingError(`row ${i} has dimension ${vector.length}, expected ${dim}`);
    }
    const norm = l2norm(vector);
    if (norm < 1e-12) {
      throw new EncodingError(`row ${i} has zero norm`);
    }
    prenorms[i] = norm;
    const unit = new Float32Array(dim);
    for (let j = 0; j < dim; j++) unit[j] = vector[j] / norm;
    rows.push(unit);
  });
  return { rows, prenorms, raw };
}

function writeManifest(outPath: string, manifest: ExportManifest): void {
  writeFileSync(`${outPath}.manifest.json`, JSON.stringify(manifest, null, 2) + '\n');
}

export function exportText(
  texts: string[],
  modelId: string,
  outPath: string,
  jsonlPath?: string,
): ExportManifest {
  const encoder = resolveEncoder(modelId);
  const raw = texts.map((text) => {
    try {
      return encoder.encodeText(text);
    } catch (err) {
      throw new EncodingError(`failed to encode ${JSON.stringify(text)}: ${err}`);
    }
  });
  const batch = normalizeBatch(raw, encoder.dim);
  writeDcap(outPath, batch.rows, batch.prenorms, texts);
  if (jsonlPath) writeJsonl(jsonlPath, texts, batch);
  const manifest: ExportManifest = {
    model: encoder.id,
    modality: 'text',
    dim: encoder.dim,
    count: texts.length,
    normalization: { stored: 'post', prenorm: 'pre' },
  };
  writeManifest(outPath, manifest);
  return manifest;
}

export function exportImages(
  imagePaths: string[],
  modelId: string,
  outPath: string,
  jsonlPath?: string,
): ExportManifest {
  const encoder = resolveEncoder(modelId);
  const raw = imagePaths.map((path) => {
    let bytes: Buffer;
    try {
      bytes = readFileSync(path);
    } catch (err) {
      throw new EncodingError(`cannot read image ${path}: ${err}`);
    }
    try {
      return encoder.encodeImage(bytes);
    } catch (err) {
      throw new EncodingError(`failed to encode ${path}: ${err}`);
    }
  });
  const batch = normalizeBatch(raw, encoder.dim);
  // the text block carries the source paths for image exports
  writeDcap(outPath, batch.rows, batch.prenorms, imagePaths);
  if (jsonlPath) writeJsonl(jsonlPath, imagePaths, batch);
  const manifest: ExportManifest = {
    model: encoder.id,
    modality: 'image',
    dim: encoder.dim,
    count: imagePaths.length,
    normalization: { stored: 'post', prenorm: 'pre' },
  };
  writeManifest(outPath, manifest);
  return manifest;
}

/** Debug fallback: {text, embedding (raw), prenorm} per line, engine-readable. */
export function writeJsonl(path: string, texts: string[], batch: EncodedBatch): void {
  const lines = texts.map((text, i) =>
    JSON.stringify({
      text,
      embedding: Array.from(batch.raw[i]),
      prenorm: batch.prenorms[i],
    }),
  );
  const tmp = `${path}.tmp`;
  writeFileSync(tmp, lines.join('\n') + '\n');
  try {
    renameSync(tmp, path);
  } catch (err) {
    unlinkSync(tmp);
    throw err;
  }
}

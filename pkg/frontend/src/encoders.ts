/**
 * Dual-encoder backends, selected by model id.
 *
 * The default backend is a deterministic hashed-feature dual encoder: text
 * features come from word and word-bigram hashing, image features from byte
 * trigram hashing, and the image side carries a fixed offset direction so the
 * two modalities sit apart in the shared space the way contrastive towers do.
 * No weights are downloaded; identical inputs always produce identical
 * embeddings, which is what the downstream interop checks need. A real
 * checkpoint-backed encoder can be registered under its own model id.
 */

export interface DualEncoder {
  readonly id: string;
  readonly dim: number;
  /** raw (pre-normalization) text features */
  encodeText(text: string): Float64Array;
  /** raw (pre-normalization) image features from file bytes */
  encodeImage(bytes: Buffer): Float64Array;
}

export class ModelLoadError extends Error {}

const FNV_OFFSET = 0x811c9dc5;
const FNV_PRIME = 0x01000193;

function fnv1a(data: string, seed = FNV_OFFSET): number {
  let h = seed >>> 0;
  for (let i = 0; i < data.length; i++) {
    h ^= data.charCodeAt(i) & 0xff;
    h = Math.imul(h, FNV_PRIME) >>> 0;
  }
  return h >>> 0;
}

function fnv1aBytes(bytes: Buffer, start: number, end: number, seed = FNV_OFFSET): number {
  let h = seed >>> 0;
  for (let i = start; i < end; i++) {
    h ^= bytes[i];
    h = Math.imul(h, FNV_PRIME) >>> 0;
  }
  return h >>> 0;
}

/** deterministic value in [-1, 1) derived from a hash */
function hashValue(h: number): number {
  return ((h >>> 9) / (1 << 23)) - 1.0;
}

function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function fixedUnitDirection(dim: number, seed: number): Float64Array {
  const rand = mulberry32(seed);
  const v = new Float64Array(dim);
  for (let i = 0; i < dim; i += 2) {
    // Box-Muller; deterministic for the fixed seed
    const u1 = Math.max(rand(), 1e-12);
    const u2 = rand();
    const r = Math.sqrt(-2.0 * Math.log(u1));
    v[i] = r * Math.cos(2 * Math.PI * u2);
    if (i + 1 < dim) v[i + 1] = r * Math.sin(2 * Math.PI * u2);
  }
  let norm = 0;
  for (let i = 0; i < dim; i++) norm += v[i] * v[i];
  norm = Math.sqrt(norm);
  for (let i = 0; i < dim; i++) v[i] /= norm;
  return v;
}

export function l2norm(v: ArrayLike<number>): number {
  let total = 0;
  for (let i = 0; i < v.length; i++) total += v[i] * v[i];
  return Math.sqrt(total);
}

class HashNgramEncoder implements DualEncoder {
  readonly id: string;
  readonly dim: number;
  private readonly offsetScale = 0.3;
  private readonly offsetDirection: Float64Array;

  constructor(dim: number) {
    this.id = `hash-ngram-${dim}`;
    this.dim = dim;
    this.offsetDirection = fixedUnitDirection(dim, 0x5eed);
  }

  encodeText(text: string): Float64Array {
    const out = new Float64Array(this.dim);
    const words = text.toLowerCase().split(/\s+/).filter((w) => w.length > 0);
    if (words.length === 0) {
      throw new Error('cannot encode empty text');
    }
    const add = (token: string) => {
      const h1 = fnv1a(token);
      const h2 = fnv1a(token, 0x9747b28c);
      out[h1 % this.dim] += 1.0 + hashValue(h2);
      out[h2 % this.dim] += hashValue(h1);
    };
    for (const word of words) add(word);
    for (let i = 0; i + 1 < words.length; i++) add(`${words[i]} ${words[i + 1]}`);
    return out;
  }

  encodeImage(bytes: Buffer): Float64Array {
    if (bytes.length === 0) {
      throw new Error('cannot encode an empty image file');
    }
    const features = new Float64Array(this.dim);
    const step = Math.max(1, Math.floor(bytes.length / 4096)); // cap the scan
    for (let i = 0; i + 3 <= bytes.length; i += step) {
      const h1 = fnv1aBytes(bytes, i, i + 3);
      const h2 = fnv1aBytes(bytes, i, i + 3, 0x9747b28c);
      features[h1 % this.dim] += 1.0 + hashValue(h2);
      features[h2 % this.dim] += hashValue(h1);
    }
    const norm = l2norm(features);
    if (norm < 1e-12) {
      throw new Error('image features collapsed to zero');
    }
    // unit features plus the fixed cross-modal displacement
    const out = new Float64Array(this.dim);
    for (let i = 0; i < this.dim; i++) {
      out[i] = features[i] / norm + this.offsetScale * this.offsetDirection[i];
    }
    return out;
  }
}

const REGISTRY = new Map<string, () => DualEncoder>([
  ['hash-ngram-512', () => new HashNgramEncoder(512)],
  ['hash-ngram-64', () => new HashNgramEncoder(64)],
]);

export function resolveEncoder(modelId: string): DualEncoder {
  const factory = REGISTRY.get(modelId);
  if (!factory) {
    const known = [...REGISTRY.keys()].join(', ');
    throw new ModelLoadError(`unknown model id '${modelId}' (available: ${known})`);
  }
  return factory();
}

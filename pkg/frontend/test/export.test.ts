import { execFileSync } from 'node:child_process';
import { mkdtempSync, readFileSync, writeFileSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';

import { describe, expect, it } from 'vitest';

import { readDcap } from '../src/dcap.js';
import { resolveEncoder, ModelLoadError } from '../src/encoders.js';
import { exportImages, exportText } from '../src/export.js';
import { main } from '../src/cli.js';

const MODEL = 'hash-ngram-512';

const CAPTIONS = [
  'a small red cube on a table',
  'two green spheres beside a wall',
  'the large blue cone casts a shadow',
  'a tiny yellow torus floats above water',
  'purple prisms stacked in a corner',
  'an orange disk leaning against glass',
  'black wedges arranged in a circle',
  'a white slab covered in dust',
  'shiny metal cubes reflecting sunlight',
  'a fuzzy object half hidden in grass',
];

function tmp(): string {
  return mkdtempSync(join(tmpdir(), 'clip-export-'));
}

function cosine(a: Float32Array | Float64Array, b: Float32Array | Float64Array): number {
  let dot = 0;
  for (let i = 0; i < a.length; i++) dot += a[i] * b[i];
  return dot;
}

function centroidDistance(a: Float32Array[], b: Float32Array[]): number {
  const dim = a[0].length;
  const ca = new Float64Array(dim);
  const cb = new Float64Array(dim);
  for (const row of a) for (let j = 0; j < dim; j++) ca[j] += row[j] / a.length;
  for (const row of b) for (let j = 0; j < dim; j++) cb[j] += row[j] / b.length;
  let dist = 0;
  for (let j = 0; j < dim; j++) dist += (ca[j] - cb[j]) ** 2;
  return Math.sqrt(dist);
}

function runEngine(args: string[]): string {
  return execFileSync('python3', ['-m', 'memcap.cli', ...args], { encoding: 'utf-8' });
}

describe('text export', () => {
  it('writes a loadable file with unit rows and correct metadata', () => {
    const dir = tmp();
    const out = join(dir, 'text.dcap');
    const manifest = exportText(CAPTIONS, MODEL, out);
    expect(manifest.count).toBe(10);
    expect(manifest.dim).toBe(512);

    const loaded = readDcap(out);
    expect(loaded.texts).toEqual(CAPTIONS);
    expect(loaded.embeddings.length).toBe(10);
    for (const row of loaded.embeddings) {
      let norm = 0;
      for (const v of row) norm += v * v;
      expect(Math.abs(Math.sqrt(norm) - 1.0)).toBeLessThan(1e-3);
    }
  });

  it('round-trips exporter values within float32 quantization', () => {
    const dir = tmp();
    const out = join(dir, 'text.dcap');
    exportText(CAPTIONS, MODEL, out);
    const encoder = resolveEncoder(MODEL);
    const loaded = readDcap(out);
    CAPTIONS.forEach((caption, i) => {
      const raw = encoder.encodeText(caption);
      let norm = 0;
      for (const v of raw) norm += v * v;
      norm = Math.sqrt(norm);
      expect(Math.abs(loaded.prenorms[i] - norm)).toBeLessThan(1e-3);
      for (let j = 0; j < raw.length; j++) {
        expect(Math.abs(loaded.embeddings[i][j] - raw[j] / norm)).toBeLessThan(1e-6);
      }
    });
  });

  it('is deterministic: re-export is byte-identical', () => {
    const dir = tmp();
    const a = join(dir, 'a.dcap');
    const b = join(dir, 'b.dcap');
    exportText(CAPTIONS, MODEL, a);
    exportText(CAPTIONS, MODEL, b);
    expect(readFileSync(a).equals(readFileSync(b))).toBe(true);
  });

  it('self-retrieval: each row is its own nearest neighbor', () => {
    const dir = tmp();
    const out = join(dir, 'text.dcap');
    exportText(CAPTIONS, MODEL, out);
    const { embeddings } = readDcap(out);
    embeddings.forEach((query, i) => {
      let best = -1;
      let bestSim = -Infinity;
      embeddings.forEach((row, j) => {
        const sim = cosine(query, row);
        if (sim > bestSim) {
          bestSim = sim;
          best = j;
        }
      });
      expect(best).toBe(i);
    });
  });

  it('rejects unknown model ids', () => {
    expect(() => exportText(CAPTIONS, 'no-such-model', '/dev/null')).toThrow(ModelLoadError);
  });
});

describe('image export', () => {
  function writeImages(dir: string): string[] {
    return CAPTIONS.map((caption, i) => {
      const path = join(dir, `img${i}.bin`);
      // stand-in image payload derived from the caption text
      writeFileSync(path, Buffer.from(`IMG\x00${caption}\x00${caption}`, 'utf-8'));
      return path;
    });
  }

  it('single image gives count 1; identical files give identical rows', () => {
    const dir = tmp();
    const img = join(dir, 'one.bin');
    writeFileSync(img, Buffer.from('payload bytes payload bytes'));
    const out = join(dir, 'one.dcap');
    const manifest = exportImages([img], MODEL, out);
    expect(manifest.count).toBe(1);
    expect(manifest.modality).toBe('image');

    const out2 = join(dir, 'two.dcap');
    exportImages([img, img], MODEL, out2);
    const loaded = readDcap(out2);
    expect(Array.from(loaded.embeddings[0])).toEqual(Array.from(loaded.embeddings[1]));
  });

  it('paired text/image exports sit apart: centroid distance above 0.1', () => {
    const dir = tmp();
    const textOut = join(dir, 'text.dcap');
    const imageOut = join(dir, 'image.dcap');
    exportText(CAPTIONS, MODEL, textOut);
    exportImages(writeImages(dir), MODEL, imageOut);
    const texts = readDcap(textOut);
    const images = readDcap(imageOut);
    expect(centroidDistance(texts.embeddings, images.embeddings)).toBeGreaterThan(0.1);
  });
});

describe('engine interop', () => {
  it('a 10-caption export loads in the engine and self-retrieves at 100%', () => {
    const dir = tmp();
    const out = join(dir, 'text.dcap');
    exportText(CAPTIONS, MODEL, out);
    const hyp = join(dir, 'retrieved.txt');
    runEngine([
      'decode',
      '--strategy', 'retrieve',
      '--memory', out,
      '--query-file', out,
      '--out', hyp,
    ]);
    const lines = readFileSync(hyp, 'utf-8').trim().split('\n');
    expect(lines).toEqual(CAPTIONS);
  });

  it('engine-side norm filter prunes a diverse corpus exported as JSONL', () => {
    const dir = tmp();
    const texts = [
      'one',
      'two words',
      'three short words',
      'a sentence of exactly six words',
      'a noticeably longer sentence that keeps going with many extra words',
      'an even longer rambling sentence that continues well past the point of brevity and adds still more words',
    ];
    const jsonl = join(dir, 'rows.jsonl');
    exportText(texts, MODEL, join(dir, 'unused.dcap'), jsonl);

    const encoder = resolveEncoder(MODEL);
    const norms = texts
      .map((t) => {
        const raw = encoder.encodeText(t);
        let total = 0;
        for (const v of raw) total += v * v;
        return Math.sqrt(total);
      })
      .sort((a, b) => a - b);
    const threshold = (norms[2] + norms[3]) / 2; // median split

    const filtered = join(dir, 'filtered.dcap');
    const stdout = runEngine([
      'build-memory',
      '--input', jsonl,
      '--encoder', 'file',
      '--max-len', '1000',
      '--max-prenorm', String(threshold),
      '--output', filtered,
    ]);
    expect(stdout).toContain('count=3');
  });

  it('cli entry point exports and reports', () => {
    const dir = tmp();
    const input = join(dir, 'captions.txt');
    writeFileSync(input, CAPTIONS.join('\n') + '\n');
    const out = join(dir, 'cli.dcap');
    const code = main(['export-text', '--input', input, '--out', out, '--model', MODEL]);
    expect(code).toBe(0);
    const manifest = JSON.parse(readFileSync(`${out}.manifest.json`, 'utf-8'));
    expect(manifest.count).toBe(10);
    expect(readDcap(out).dim).toBe(512);
  });
});

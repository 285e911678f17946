#!/usr/bin/env node
/**
 * clip-export export-text   --model <id> --input <txt>  --out <dcap> [--jsonl <path>]
 * clip-export export-images --model <id> --input <list> --out <dcap> [--jsonl <path>]
 *
 * export-text reads one caption per line; export-images reads one image path
 * per line. Both write the engine's DCAP layout plus <out>.manifest.json.
 */

import { readFileSync } from 'node:fs';

import { exportImages, exportText } from './export.js';

const DEFAULT_MODEL = 'hash-ngram-512';

function parseFlags(argv: string[]): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    const value = argv[i + 1];
    if (!key.startsWith('--') || value === undefined) {
      throw new UsageError(`malformed arguments near '${key}'`);
    }
    flags.set(key.slice(2), value);
  }
  return flags;
}

class UsageError extends Error {}

function requireFlag(flags: Map<string, string>, name: string): string {
  const value = flags.get(name);
  if (!value) throw new UsageError(`missing required flag --${name}`);
  return value;
}

function readLines(path: string): string[] {
  return readFileSync(path, 'utf-8')
    .split('\n')
    .map((line) => line.trim())
    .filter((line) => line.length > 0);
}

export function main(argv: string[]): number {
  const [command, ...rest] = argv;
  try {
    if (command !== 'export-text' && command !== 'export-images') {
      throw new UsageError('usage: clip-export <export-text|export-images> --input <file> --out <dcap> [--model <id>] [--jsonl <path>]');
    }
    const flags = parseFlags(rest);
    const model = flags.get('model') ?? DEFAULT_MODEL;
    const input = requireFlag(flags, 'input');
    const out = requireFlag(flags, 'out');
    const jsonl = flags.get('jsonl');
    const lines = readLines(input);
    const manifest =
      command === 'export-text'
        ? exportText(lines, model, out, jsonl)
        : exportImages(lines, model, out, jsonl);
    console.log(
      `model=${manifest.model} modality=${manifest.modality} count=${manifest.count} dim=${manifest.dim}`,
    );
    return 0;
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return err instanceof UsageError ? 2 : 1;
  }
}

if (import.meta.url === `file://${process.argv[1]}`) {
  process.exit(main(process.argv.slice(2)));
}

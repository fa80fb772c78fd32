#!/usr/bin/env node
/** Exporter CLI.
 *
 * Usage:
 *   node dist/cli.js export --checkpoint m.safetensors --manifest m.json \
 *        --batch batch.optn --out model.optn --reference reference.json
 *   node dist/cli.js make-fixture --arch encoder|cnn --out-dir DIR --seed N
 */

import { mkdirSync } from 'node:fs';

import { runExport } from './export.js';
import { makeFixture } from './fixture.js';

function parseFlags(argv: string[]): Map<string, string> {
  const out = new Map<string, string>();
  for (let i = 0; i < argv.length; i++) {
    const a = argv[i];
    if (!a.startsWith('--')) {
      throw new Error(`unexpected argument ${a}`);
    }
    const key = a.slice(2);
    const value = argv[++i];
    if (value === undefined) throw new Error(`flag --${key} needs a value`);
    out.set(key, value);
  }
  return out;
}

function need(flags: Map<string, string>, key: string): string {
  const v = flags.get(key);
  if (!v) throw new Error(`missing required flag --${key}`);
  return v;
}

function main(argv: string[]): number {
  const [command, ...rest] = argv;
  try {
    if (command === 'export') {
      const flags = parseFlags(rest);
      const res = runExport({
        checkpoint: need(flags, 'checkpoint'),
        manifest: need(flags, 'manifest'),
        batch: need(flags, 'batch'),
        out: need(flags, 'out'),
        reference: need(flags, 'reference'),
      });
      process.stdout.write(JSON.stringify(res) + '\n');
      return 0;
    }
    if (command === 'make-fixture') {
      const flags = parseFlags(rest);
      const arch = need(flags, 'arch');
      if (arch !== 'encoder' && arch !== 'cnn') {
        throw new Error(`--arch must be encoder|cnn, got ${arch}`);
      }
      const outDir = need(flags, 'out-dir');
      mkdirSync(outDir, { recursive: true });
      makeFixture({ arch, outDir, seed: Number(flags.get('seed') ?? '0') });
      process.stdout.write(JSON.stringify({ outDir, arch }) + '\n');
      return 0;
    }
    throw new Error(`unknown command ${command ?? '(none)'}; ` +
                    'expected export or make-fixture');
  } catch (err) {
    process.stderr.write(JSON.stringify({ error: String((err as Error).message) }) + '\n');
    return 1;
  }
}

process.exit(main(process.argv.slice(2)));

import { mkdtempSync, readFileSync, rmSync, writeFileSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';
import { afterAll, describe, expect, it } from 'vitest';

import { readContainer } from '../src/container.js';
import { runExport } from '../src/export.js';
import { makeCnnFixture, makeEncoderFixture } from '../src/fixture.js';
import { cnnForward, encoderForward } from '../src/forward.js';
import { readSafetensors, writeSafetensors } from '../src/safetensors.js';
import { Rng, Tensor } from '../src/tensors.js';

const dirs: string[] = [];

function workdir(): string {
  const d = mkdtempSync(join(tmpdir(), 'exporter-'));
  dirs.push(d);
  return d;
}

afterAll(() => {
  for (const d of dirs) rmSync(d, { recursive: true, force: true });
});

function exportFixture(arch: 'encoder' | 'cnn', seed = 7) {
  const d = workdir();
  if (arch === 'encoder') makeEncoderFixture(d, seed);
  else makeCnnFixture(d, seed);
  const paths = {
    checkpoint: join(d, 'checkpoint.safetensors'),
    manifest: join(d, 'manifest.json'),
    batch: join(d, 'batch.optn'),
    out: join(d, 'model.optn'),
    reference: join(d, 'reference.json'),
  };
  runExport(paths);
  return { d, paths };
}

describe('safetensors round trip', () => {
  it('reads back written tensors bitwise', () => {
    const d = workdir();
    const rng = new Rng(1);
    const tensors = new Map<string, Tensor>();
    tensors.set('a', rng.normalF32([3, 4]));
    tensors.set('b', rng.normalF32([5]));
    const path = join(d, 'x.safetensors');
    writeSafetensors(path, tensors);
    const back = readSafetensors(path);
    expect([...back.keys()].sort()).toEqual(['a', 'b']);
    expect(Array.from(back.get('a')!.data)).toEqual(
      Array.from(tensors.get('a')!.data));
    expect(back.get('a')!.shape).toEqual([3, 4]);
  });
});

describe('encoder export', () => {
  it('produces a container whose bytes match the cast source', () => {
    const { paths } = exportFixture('encoder');
    const ckpt = readSafetensors(paths.checkpoint);
    const model = readContainer(paths.out);
    expect(model.arch).toBe('transformer');
    // gamma is stored untransposed: bytes must be identical
    const gamma = model.tensors.get('block0.ln1_gamma')!;
    const src = ckpt.get('layers.0.norm1.weight')!;
    expect(Array.from(gamma.data)).toEqual(Array.from(src.data));
    // linear weights are transposed [out,in] -> [in,out]
    const wq = model.tensors.get('block0.wq')!;
    const wqSrc = ckpt.get('layers.0.attn.q.weight')!;
    const d = wq.shape[0];
    expect(wq.data[1 * d + 0]).toBeCloseTo(Number(wqSrc.data[0 * d + 1]), 12);
  });

  it('container payload is 64-byte aligned and versioned', () => {
    const { paths } = exportFixture('encoder');
    const raw = readFileSync(paths.out);
    expect(raw.subarray(0, 4).toString('ascii')).toBe('OPTN');
    expect(raw.readUInt32LE(4)).toBe(1);
    const headerLen = Number(raw.readBigUInt64LE(8));
    const header = JSON.parse(raw.subarray(16, 16 + headerLen).toString('utf-8'));
    for (const ent of header.tensors) {
      expect(ent.byte_offset % 64).toBe(0);
    }
  });

  it('reference logits are finite and shaped [B, classes]', () => {
    const { paths } = exportFixture('encoder');
    const ref = JSON.parse(readFileSync(paths.reference, 'utf-8'));
    expect(ref.schema).toBe('export-reference/1');
    expect(ref.logits.length).toBe(4);
    expect(ref.logits[0].length).toBe(4);
    for (const row of ref.logits) {
      for (const v of row) expect(Number.isFinite(v)).toBe(true);
    }
  });

  it('forward is deterministic given the exported container', () => {
    const { paths } = exportFixture('encoder');
    const model = readContainer(paths.out);
    const batch = readContainer(paths.batch);
    const a = encoderForward(model, batch);
    const b = encoderForward(model, batch);
    expect(a).toEqual(b);
  });

  it('errors on a manifest missing the classifier', () => {
    const d = workdir();
    makeEncoderFixture(d, 3);
    const manifest = JSON.parse(readFileSync(join(d, 'manifest.json'), 'utf-8'));
    delete manifest.tensors.classifier;
    writeFileSync(join(d, 'manifest.json'), JSON.stringify(manifest));
    expect(() => runExport({
      checkpoint: join(d, 'checkpoint.safetensors'),
      manifest: join(d, 'manifest.json'),
      batch: join(d, 'batch.optn'),
      out: join(d, 'model.optn'),
      reference: join(d, 'reference.json'),
    })).toThrow(/unmapped tensor: classifier/);
  });

  it('errors on non-f32 sources unless cast is requested', () => {
    const d = workdir();
    makeEncoderFixture(d, 4);
    const ckpt = readSafetensors(join(d, 'checkpoint.safetensors'));
    const pos = ckpt.get('pos_embed')!;
    ckpt.set('pos_embed', {
      dtype: 'f64', shape: pos.shape, data: Float64Array.from(pos.data),
    });
    writeSafetensors(join(d, 'checkpoint.safetensors'), ckpt);
    const args = {
      checkpoint: join(d, 'checkpoint.safetensors'),
      manifest: join(d, 'manifest.json'),
      batch: join(d, 'batch.optn'),
      out: join(d, 'model.optn'),
      reference: join(d, 'reference.json'),
    };
    expect(() => runExport(args)).toThrow(/is f64, not f32/);
    const manifest = JSON.parse(readFileSync(join(d, 'manifest.json'), 'utf-8'));
    manifest.tensors.positional.cast = true;
    writeFileSync(join(d, 'manifest.json'), JSON.stringify(manifest));
    expect(() => runExport(args)).not.toThrow();
  });

  it('errors on dimension mismatch', () => {
    const d = workdir();
    makeEncoderFixture(d, 5);
    const manifest = JSON.parse(readFileSync(join(d, 'manifest.json'), 'utf-8'));
    manifest.dims.ffn_dims = [32, 32]; // checkpoint has 16
    writeFileSync(join(d, 'manifest.json'), JSON.stringify(manifest));
    expect(() => runExport({
      checkpoint: join(d, 'checkpoint.safetensors'),
      manifest: join(d, 'manifest.json'),
      batch: join(d, 'batch.optn'),
      out: join(d, 'model.optn'),
      reference: join(d, 'reference.json'),
    })).toThrow(/dimension mismatch/);
  });
});

describe('cnn export', () => {
  it('folds batch norm into the affine', () => {
    const { paths } = exportFixture('cnn');
    const ckpt = readSafetensors(paths.checkpoint);
    const model = readContainer(paths.out);
    const scale = model.tensors.get('conv0.scale')!;
    const gamma = ckpt.get('bn.0.weight')!;
    const variance = ckpt.get('bn.0.running_var')!;
    const want = Number(gamma.data[0]) / Math.sqrt(Number(variance.data[0]) + 1e-5);
    expect(Number(scale.data[0])).toBeCloseTo(want, 6);
  });

  it('cnn reference forward runs and matches shapes', () => {
    const { paths } = exportFixture('cnn');
    const model = readContainer(paths.out);
    const batch = readContainer(paths.batch);
    const logits = cnnForward(model, batch);
    expect(logits.length).toBe(3);
    expect(logits[0].length).toBe(4);
  });
});

/** Seeded toy checkpoints + manifests + calibration batches, for tests and
 * for exercising the full export path without a real model zoo. */

import { writeFileSync } from 'node:fs';
import { join } from 'node:path';

import { writeContainer } from './container.js';
import { Manifest } from './manifest.js';
import { writeSafetensors } from './safetensors.js';
import { Rng, Tensor, i32 } from './tensors.js';

export interface FixtureOpts {
  arch: 'encoder' | 'cnn';
  outDir: string;
  seed: number;
}

export function makeEncoderFixture(outDir: string, seed: number) {
  const rng = new Rng(seed);
  const nBlocks = 2;
  const H = 4;
  const dh = 8;
  const D = H * dh;
  const df = 16;
  const classes = 4;
  const maxSeq = 16;
  const B = 4;
  const T = 8;
  const scale = 1.0 / Math.sqrt(D);

  const ckpt = new Map<string, Tensor>();
  const refs: Record<string, { source: string; transpose?: boolean }> = {};
  for (let i = 0; i < nBlocks; i++) {
    // checkpoint uses [out,in] linear weights, ViT-ish naming
    const layer = `layers.${i}`;
    const add = (engine: string, source: string, shape: number[], s = scale) => {
      ckpt.set(source, rng.normalF32(shape, s));
      refs[`block${i}.${engine}`] = { source, transpose: shape.length === 2 };
    };
    add('wq', `${layer}.attn.q.weight`, [D, D]);
    add('wk', `${layer}.attn.k.weight`, [D, D]);
    add('wv', `${layer}.attn.v.weight`, [D, D]);
    add('wo', `${layer}.attn.out.weight`, [D, D]);
    add('w1', `${layer}.mlp.fc1.weight`, [df, D]);
    add('w2', `${layer}.mlp.fc2.weight`, [D, df]);
    const ones = new Float32Array(D).fill(1);
    ckpt.set(`${layer}.norm1.weight`, { dtype: 'f32', shape: [D], data: ones.slice() });
    ckpt.set(`${layer}.norm1.bias`, rng.normalF32([D], 0.05));
    ckpt.set(`${layer}.norm2.weight`, { dtype: 'f32', shape: [D], data: ones.slice() });
    ckpt.set(`${layer}.norm2.bias`, rng.normalF32([D], 0.05));
    refs[`block${i}.ln1_gamma`] = { source: `${layer}.norm1.weight` };
    refs[`block${i}.ln1_beta`] = { source: `${layer}.norm1.bias` };
    refs[`block${i}.ln2_gamma`] = { source: `${layer}.norm2.weight` };
    refs[`block${i}.ln2_beta`] = { source: `${layer}.norm2.bias` };
  }
  ckpt.set('head.weight', rng.normalF32([classes, D], scale * 2));
  refs['classifier'] = { source: 'head.weight', transpose: true };
  ckpt.set('pos_embed', rng.normalF32([maxSeq, D], 0.3));
  refs['positional'] = { source: 'pos_embed' };

  const manifest: Manifest = {
    schema: 'export-manifest/1',
    arch: 'transformer',
    dims: {
      n_blocks: nBlocks, d_model: D, n_heads: H, head_dim: dh,
      ffn_dims: [df, df], n_classes: classes, pooling: 'first',
      max_seq: maxSeq,
    },
    tensors: refs,
  };

  writeSafetensors(join(outDir, 'checkpoint.safetensors'), ckpt);
  writeFileSync(join(outDir, 'manifest.json'),
                JSON.stringify(manifest, null, 2) + '\n');
  const batch = new Map<string, Tensor>();
  batch.set('features', rng.normalF32([B, T, D], 1.0));
  const labels = new Int32Array(B);
  for (let b = 0; b < B; b++) labels[b] = rng.int(classes);
  batch.set('labels', i32([B], labels));
  writeContainer(join(outDir, 'batch.optn'), 'transformer', { kind: 'batch' }, batch);
}

export function makeCnnFixture(outDir: string, seed: number) {
  const rng = new Rng(seed);
  const channels = [4, 6];
  const inC = 3;
  const k = 3;
  const classes = 4;
  const B = 3;
  const hw = 8;

  const ckpt = new Map<string, Tensor>();
  const layers = [];
  let cIn = inC;
  for (let li = 0; li < channels.length; li++) {
    const cOut = channels[li];
    const fan = cIn * k * k;
    ckpt.set(`features.${li}.weight`,
             rng.normalF32([cOut, cIn, k, k], 1.0 / Math.sqrt(fan)));
    ckpt.set(`features.${li}.bias`, rng.normalF32([cOut], 0.05));
    const gamma = rng.normalF32([cOut], 0.1);
    for (let c = 0; c < cOut; c++) (gamma.data as Float32Array)[c] += 1.0;
    const variance = rng.normalF32([cOut], 0.05);
    for (let c = 0; c < cOut; c++) {
      (variance.data as Float32Array)[c] =
        Math.abs((variance.data as Float32Array)[c]) + 0.5;
    }
    ckpt.set(`bn.${li}.weight`, gamma);
    ckpt.set(`bn.${li}.bias`, rng.normalF32([cOut], 0.05));
    ckpt.set(`bn.${li}.running_mean`, rng.normalF32([cOut], 0.1));
    ckpt.set(`bn.${li}.running_var`, variance);
    layers.push({
      conv_weight: `features.${li}.weight`,
      conv_bias: `features.${li}.bias`,
      bn: {
        gamma: `bn.${li}.weight`, beta: `bn.${li}.bias`,
        mean: `bn.${li}.running_mean`, var: `bn.${li}.running_var`,
        eps: 1e-5,
      },
      stride: 1, pad: 1, pool: li === channels.length - 1 ? 2 : 0,
    });
    cIn = cOut;
  }
  ckpt.set('head.weight', rng.normalF32([classes, cIn], 1.0 / Math.sqrt(cIn)));

  const manifest: Manifest = {
    schema: 'export-manifest/1',
    arch: 'cnn',
    layers,
    classifier: { source: 'head.weight', transpose: true },
    n_classes: classes,
  };
  writeSafetensors(join(outDir, 'checkpoint.safetensors'), ckpt);
  writeFileSync(join(outDir, 'manifest.json'),
                JSON.stringify(manifest, null, 2) + '\n');
  const batch = new Map<string, Tensor>();
  batch.set('features', rng.normalF32([B, inC, hw, hw], 1.0));
  const labels = new Int32Array(B);
  for (let b = 0; b < B; b++) labels[b] = rng.int(classes);
  batch.set('labels', i32([B], labels));
  writeContainer(join(outDir, 'batch.optn'), 'cnn', { kind: 'batch' }, batch);
}

export function makeFixture(opts: FixtureOpts) {
  if (opts.arch === 'encoder') makeEncoderFixture(opts.outDir, opts.seed);
  else makeCnnFixture(opts.outDir, opts.seed);
}

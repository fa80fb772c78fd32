/** Checkpoint -> container conversion.
 *
 * The exporter does no pruning work at all: it remaps and casts tensors,
 * folds CNN batch norms into per-channel affines, writes the container, and
 * records reference logits from its own float64 forward for the engine to
 * cross-check against.
 */

import { createHash } from 'node:crypto';
import { readFileSync, writeFileSync } from 'node:fs';

import { Container, readContainer, writeContainer } from './container.js';
import { cnnForward, encoderForward } from './forward.js';
import {
  CnnLayerSpec,
  Manifest,
  TensorRef,
  expectedEncoderShape,
  loadManifest,
  requiredEncoderTensors,
} from './manifest.js';
import { Tensor, castF32, shapesEqual, transpose2d } from './tensors.js';
import { readSafetensors } from './safetensors.js';

function resolve(
  checkpoint: Map<string, Tensor>,
  engineName: string,
  ref: TensorRef | undefined,
): Tensor {
  if (!ref) throw new Error(`unmapped tensor: ${engineName}`);
  const src = checkpoint.get(ref.source);
  if (!src) {
    throw new Error(`unmapped tensor: ${engineName} (source ${ref.source} missing)`);
  }
  let t = src;
  if (t.dtype !== 'f32') {
    if (!ref.cast) {
      throw new Error(
        `${engineName}: source ${ref.source} is ${t.dtype}, not f32; ` +
        `set "cast": true to convert explicitly`);
    }
    t = castF32(t);
  }
  if (ref.transpose) t = castF32(transpose2d(t));
  return t;
}

function exportEncoder(m: Manifest, checkpoint: Map<string, Tensor>) {
  const dims = m.dims!;
  const refs = m.tensors!;
  const seen = new Set<string>();
  const out = new Map<string, Tensor>();
  for (const name of requiredEncoderTensors(dims)) {
    if (seen.has(name)) throw new Error(`tensor ${name} mapped twice`);
    seen.add(name);
    const t = resolve(checkpoint, name, refs[name]);
    const want = expectedEncoderShape(name, dims);
    if (!shapesEqual(t.shape, want)) {
      throw new Error(
        `${name}: dimension mismatch, checkpoint gives [${t.shape}] ` +
        `but dims require [${want}]`);
    }
    out.set(name, t);
  }
  const headerDims: Record<string, unknown> = {
    kind: 'model',
    n_blocks: dims.n_blocks,
    d_model: dims.d_model,
    n_heads: dims.n_heads,
    head_dim: dims.head_dim,
    ffn_dims: dims.ffn_dims,
    n_classes: dims.n_classes,
    pooling: dims.pooling,
  };
  if (dims.vocab_size != null) headerDims.vocab_size = dims.vocab_size;
  if (dims.max_seq != null) headerDims.max_seq = dims.max_seq;
  return { dims: headerDims, tensors: out };
}

/** Fold y = BN(conv(x) + b) into conv (bias-free) + per-channel affine:
 * scale = gamma / sqrt(var + eps), shift = beta + scale * (b - mean). */
function foldLayer(spec: CnnLayerSpec, checkpoint: Map<string, Tensor>, li: number) {
  const name = `conv${li}`;
  const w = resolve(checkpoint, `${name}.filters`, { source: spec.conv_weight });
  const cOut = w.shape[0];
  const scale = new Float32Array(cOut).fill(1);
  const shift = new Float32Array(cOut);
  if (spec.conv_bias) {
    const b = resolve(checkpoint, `${name}.bias`, { source: spec.conv_bias });
    for (let c = 0; c < cOut; c++) shift[c] = Number(b.data[c]);
  }
  if (spec.bn) {
    const gamma = resolve(checkpoint, `${name}.bn_gamma`, { source: spec.bn.gamma });
    const beta = resolve(checkpoint, `${name}.bn_beta`, { source: spec.bn.beta });
    const mean = resolve(checkpoint, `${name}.bn_mean`, { source: spec.bn.mean });
    const variance = resolve(checkpoint, `${name}.bn_var`, { source: spec.bn.var });
    for (let c = 0; c < cOut; c++) {
      const s = Number(gamma.data[c]) / Math.sqrt(Number(variance.data[c]) + spec.bn.eps);
      shift[c] = Number(beta.data[c]) + s * (shift[c] - Number(mean.data[c]));
      scale[c] = s;
    }
  }
  return {
    filters: w,
    scale: { dtype: 'f32' as const, shape: [cOut], data: scale },
    shift: { dtype: 'f32' as const, shape: [cOut], data: shift },
  };
}

function exportCnn(m: Manifest, checkpoint: Map<string, Tensor>) {
  const out = new Map<string, Tensor>();
  const layerDims: Array<Record<string, number>> = [];
  m.layers!.forEach((spec, li) => {
    const folded = foldLayer(spec, checkpoint, li);
    out.set(`conv${li}.filters`, folded.filters);
    out.set(`conv${li}.scale`, folded.scale);
    out.set(`conv${li}.shift`, folded.shift);
    layerDims.push({
      c_out: folded.filters.shape[0],
      c_in: folded.filters.shape[1],
      kernel: folded.filters.shape[2],
      stride: spec.stride,
      pad: spec.pad,
      pool: spec.pool,
    });
  });
  const cls = resolve(checkpoint, 'classifier', m.classifier);
  if (cls.shape[0] !== layerDims[layerDims.length - 1].c_out
      || cls.shape[1] !== m.n_classes) {
    throw new Error(
      `classifier: dimension mismatch, got [${cls.shape}], want ` +
      `[${layerDims[layerDims.length - 1].c_out},${m.n_classes}]`);
  }
  out.set('classifier', cls);
  return {
    dims: { kind: 'model', layers: layerDims, n_classes: m.n_classes },
    tensors: out,
  };
}

export interface ExportResult {
  containerPath: string;
  referencePath: string;
}

export function runExport(opts: {
  checkpoint: string;
  manifest: string;
  batch: string;
  out: string;
  reference: string;
}): ExportResult {
  const manifest = loadManifest(opts.manifest);
  const checkpoint = readSafetensors(opts.checkpoint);
  const { dims, tensors } =
    manifest.arch === 'transformer'
      ? exportEncoder(manifest, checkpoint)
      : exportCnn(manifest, checkpoint);
  writeContainer(opts.out, manifest.arch, dims, tensors);

  const model: Container = readContainer(opts.out);
  const batch = readContainer(opts.batch);
  const logits = manifest.arch === 'transformer'
    ? encoderForward(model, batch)
    : cnnForward(model, batch);
  const record = {
    schema: 'export-reference/1',
    source: opts.checkpoint,
    batch_sha256: createHash('sha256').update(readFileSync(opts.batch)).digest('hex'),
    logits,
  };
  writeFileSync(opts.reference, JSON.stringify(record, null, 2) + '\n');
  return { containerPath: opts.out, referencePath: opts.reference };
}

/** Export manifest: names the checkpoint tensors behind every
 * engine-required tensor, plus target dims. */

import { readFileSync } from 'node:fs';

export interface TensorRef {
  source: string;
  /** Checkpoint stores [out,in] linear weights; the engine wants [in,out]. */
  transpose?: boolean;
  /** Allow an explicit cast from f64; without it non-f32 sources error. */
  cast?: boolean;
}

export interface EncoderDims {
  n_blocks: number;
  d_model: number;
  n_heads: number;
  head_dim: number;
  ffn_dims: number[];
  n_classes: number;
  pooling: 'first' | 'mean';
  vocab_size?: number;
  max_seq?: number;
}

export interface CnnLayerSpec {
  conv_weight: string;
  conv_bias?: string;
  bn?: { gamma: string; beta: string; mean: string; var: string; eps: number };
  stride: number;
  pad: number;
  pool: number;
}

export interface Manifest {
  schema: 'export-manifest/1';
  arch: 'transformer' | 'cnn';
  /** transformer: engine tensor name -> checkpoint ref */
  tensors?: Record<string, TensorRef>;
  dims?: EncoderDims;
  /** cnn: per-layer sources incl. batch-norm params to fold */
  layers?: CnnLayerSpec[];
  classifier?: TensorRef;
  n_classes?: number;
}

export function loadManifest(path: string): Manifest {
  const m = JSON.parse(readFileSync(path, 'utf-8')) as Manifest;
  if (m.schema !== 'export-manifest/1') {
    throw new Error(`${path}: not an export-manifest/1 document`);
  }
  if (m.arch !== 'transformer' && m.arch !== 'cnn') {
    throw new Error(`${path}: unknown arch ${(m as any).arch}`);
  }
  if (m.arch === 'transformer' && (!m.tensors || !m.dims)) {
    throw new Error(`${path}: transformer manifest needs tensors + dims`);
  }
  if (m.arch === 'cnn' && (!m.layers || !m.classifier || m.n_classes == null)) {
    throw new Error(`${path}: cnn manifest needs layers + classifier + n_classes`);
  }
  return m;
}

/** Engine tensor names an encoder container must provide. */
export function requiredEncoderTensors(dims: EncoderDims): string[] {
  const names: string[] = [];
  for (let i = 0; i < dims.n_blocks; i++) {
    const p = `block${i}.`;
    names.push(p + 'wq', p + 'wk', p + 'wv', p + 'wo');
    if (dims.ffn_dims[i] > 0) names.push(p + 'w1', p + 'w2');
    names.push(p + 'ln1_gamma', p + 'ln1_beta', p + 'ln2_gamma', p + 'ln2_beta');
  }
  names.push('classifier');
  if (dims.vocab_size != null) names.push('embedding');
  if (dims.max_seq != null) names.push('positional');
  return names;
}

export function expectedEncoderShape(name: string, dims: EncoderDims): number[] {
  const d = dims.d_model;
  if (name === 'classifier') return [d, dims.n_classes];
  if (name === 'embedding') return [dims.vocab_size!, d];
  if (name === 'positional') return [dims.max_seq!, d];
  const m = name.match(/^block(\d+)\.(.+)$/);
  if (!m) throw new Error(`unexpected engine tensor name ${name}`);
  const i = Number(m[1]);
  const df = dims.ffn_dims[i];
  switch (m[2]) {
    case 'wq':
    case 'wk':
    case 'wv':
    case 'wo':
      return [d, d];
    case 'w1':
      return [d, df];
    case 'w2':
      return [df, d];
    default:
      return [d]; // layer-norm gamma/beta
  }
}

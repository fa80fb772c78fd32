/** Exporter-side reference forward passes, float64 end to end. These are the
 * cross-validation half of the round-trip check: the pruning engine must
 * reproduce these logits from the exported container to 1e-5. */

import { Container } from './container.js';
import { Tensor } from './tensors.js';

type Mat = { rows: number; cols: number; v: Float64Array };

function toMat(t: Tensor): Mat {
  const [rows, cols] = t.shape;
  return { rows, cols, v: Float64Array.from(t.data as any) };
}

function matmul(a: Mat, b: Mat): Mat {
  const out = new Float64Array(a.rows * b.cols);
  for (let i = 0; i < a.rows; i++) {
    for (let t = 0; t < a.cols; t++) {
      const av = a.v[i * a.cols + t];
      if (av === 0) continue;
      for (let j = 0; j < b.cols; j++) {
        out[i * b.cols + j] += av * b.v[t * b.cols + j];
      }
    }
  }
  return { rows: a.rows, cols: b.cols, v: out };
}

function layerNorm(x: Float64Array, d: number, gamma: Tensor, beta: Tensor): Float64Array {
  const out = new Float64Array(x.length);
  const rows = x.length / d;
  for (let r = 0; r < rows; r++) {
    let mu = 0;
    for (let j = 0; j < d; j++) mu += x[r * d + j];
    mu /= d;
    let varadd = 0;
    for (let j = 0; j < d; j++) {
      const dv = x[r * d + j] - mu;
      varadd += dv * dv;
    }
    const inv = 1.0 / Math.sqrt(varadd / d + 1e-5);
    for (let j = 0; j < d; j++) {
      out[r * d + j] =
        ((x[r * d + j] - mu) * inv) * Number(gamma.data[j]) + Number(beta.data[j]);
    }
  }
  return out;
}

function gelu(x: number): number {
  const c = Math.sqrt(2.0 / Math.PI);
  return 0.5 * x * (1.0 + Math.tanh(c * (x + 0.044715 * x * x * x)));
}

export function encoderForward(model: Container, batch: Container): number[][] {
  const dims = model.dims;
  const D = dims.d_model as number;
  const H = dims.n_heads as number;
  const dh = dims.head_dim as number;
  const N = dims.n_blocks as number;
  const t = model.tensors;

  let B: number;
  let T: number;
  let x: Float64Array;
  const tok = batch.tensors.get('tokens');
  const feats = batch.tensors.get('features');
  if (tok) {
    [B, T] = tok.shape;
    const emb = t.get('embedding');
    if (!emb) throw new Error('token batch but model has no embedding table');
    x = new Float64Array(B * T * D);
    for (let i = 0; i < B * T; i++) {
      const row = Number(tok.data[i]);
      for (let j = 0; j < D; j++) x[i * D + j] = Number(emb.data[row * D + j]);
    }
  } else if (feats) {
    [B, T] = feats.shape;
    x = Float64Array.from(feats.data as any);
  } else {
    throw new Error('batch container has neither tokens nor features');
  }
  const pos = t.get('positional');
  if (pos) {
    for (let b = 0; b < B; b++) {
      for (let s = 0; s < T; s++) {
        for (let j = 0; j < D; j++) x[(b * T + s) * D + j] += Number(pos.data[s * D + j]);
      }
    }
  }

  for (let blk = 0; blk < N; blk++) {
    const p = `block${blk}.`;
    const h1 = layerNorm(x, D, t.get(p + 'ln1_gamma')!, t.get(p + 'ln1_beta')!);
    const hm: Mat = { rows: B * T, cols: D, v: h1 };
    const q = matmul(hm, toMat(t.get(p + 'wq')!));
    const k = matmul(hm, toMat(t.get(p + 'wk')!));
    const v = matmul(hm, toMat(t.get(p + 'wv')!));
    const ctx = new Float64Array(B * T * D);
    const scores = new Float64Array(T * T);
    for (let b = 0; b < B; b++) {
      for (let hd = 0; hd < H; hd++) {
        const off = hd * dh;
        for (let i = 0; i < T; i++) {
          let mx = -Infinity;
          for (let j = 0; j < T; j++) {
            let s = 0;
            for (let e = 0; e < dh; e++) {
              s += q.v[(b * T + i) * D + off + e] * k.v[(b * T + j) * D + off + e];
            }
            s /= Math.sqrt(dh);
            scores[i * T + j] = s;
            if (s > mx) mx = s;
          }
          let denom = 0;
          for (let j = 0; j < T; j++) {
            scores[i * T + j] = Math.exp(scores[i * T + j] - mx);
            denom += scores[i * T + j];
          }
          for (let j = 0; j < T; j++) {
            const w = scores[i * T + j] / denom;
            for (let e = 0; e < dh; e++) {
              ctx[(b * T + i) * D + off + e] += w * v.v[(b * T + j) * D + off + e];
            }
          }
        }
      }
    }
    const attnOut = matmul({ rows: B * T, cols: D, v: ctx }, toMat(t.get(p + 'wo')!));
    for (let i = 0; i < x.length; i++) x[i] += attnOut.v[i];

    const ffnDims = dims.ffn_dims as number[];
    if (ffnDims[blk] > 0) {
      const h2 = layerNorm(x, D, t.get(p + 'ln2_gamma')!, t.get(p + 'ln2_beta')!);
      const hidden = matmul({ rows: B * T, cols: D, v: h2 }, toMat(t.get(p + 'w1')!));
      for (let i = 0; i < hidden.v.length; i++) hidden.v[i] = gelu(hidden.v[i]);
      const ffnOut = matmul(hidden, toMat(t.get(p + 'w2')!));
      for (let i = 0; i < x.length; i++) x[i] += ffnOut.v[i];
    }
  }

  const pooled = new Float64Array(B * D);
  if ((dims.pooling as string) === 'mean') {
    for (let b = 0; b < B; b++) {
      for (let s = 0; s < T; s++) {
        for (let j = 0; j < D; j++) pooled[b * D + j] += x[(b * T + s) * D + j];
      }
      for (let j = 0; j < D; j++) pooled[b * D + j] /= T;
    }
  } else {
    for (let b = 0; b < B; b++) {
      for (let j = 0; j < D; j++) pooled[b * D + j] = x[b * T * D + j];
    }
  }
  const logits = matmul({ rows: B, cols: D, v: pooled }, toMat(t.get('classifier')!));
  const C = dims.n_classes as number;
  const out: number[][] = [];
  for (let b = 0; b < B; b++) {
    out.push(Array.from(logits.v.subarray(b * C, (b + 1) * C)));
  }
  return out;
}

export function cnnForward(model: Container, batch: Container): number[][] {
  const feats = batch.tensors.get('features');
  if (!feats) throw new Error('cnn batch container has no features tensor');
  let [B, C, Hh, W] = feats.shape;
  let x = Float64Array.from(feats.data as any);
  const layers = model.dims.layers as Array<any>;
  for (let li = 0; li < layers.length; li++) {
    const spec = layers[li];
    const w = model.tensors.get(`conv${li}.filters`)!;
    const scale = model.tensors.get(`conv${li}.scale`)!;
    const shift = model.tensors.get(`conv${li}.shift`)!;
    const [cOut, cIn, kk] = w.shape;
    const s = spec.stride as number;
    const p = spec.pad as number;
    const hOut = Math.floor((Hh + 2 * p - kk) / s) + 1;
    const wOut = Math.floor((W + 2 * p - kk) / s) + 1;
    const y = new Float64Array(B * cOut * hOut * wOut);
    for (let b = 0; b < B; b++) {
      for (let co = 0; co < cOut; co++) {
        for (let oi = 0; oi < hOut; oi++) {
          for (let oj = 0; oj < wOut; oj++) {
            let acc = 0;
            for (let ci = 0; ci < cIn; ci++) {
              for (let di = 0; di < kk; di++) {
                const ii = oi * s + di - p;
                if (ii < 0 || ii >= Hh) continue;
                for (let dj = 0; dj < kk; dj++) {
                  const jj = oj * s + dj - p;
                  if (jj < 0 || jj >= W) continue;
                  acc += Number(w.data[((co * cIn + ci) * kk + di) * kk + dj])
                    * x[((b * C + ci) * Hh + ii) * W + jj];
                }
              }
            }
            acc = acc * Number(scale.data[co]) + Number(shift.data[co]);
            y[((b * cOut + co) * hOut + oi) * wOut + oj] = Math.max(acc, 0);
          }
        }
      }
    }
    x = y;
    C = cOut;
    Hh = hOut;
    W = wOut;
    if (spec.pool === 2) {
      const h2 = Math.floor(Hh / 2);
      const w2 = Math.floor(W / 2);
      const pooled = new Float64Array(B * C * h2 * w2);
      for (let b = 0; b < B; b++) {
        for (let c = 0; c < C; c++) {
          for (let i = 0; i < h2; i++) {
            for (let j = 0; j < w2; j++) {
              let m = -Infinity;
              for (let di = 0; di < 2; di++) {
                for (let dj = 0; dj < 2; dj++) {
                  m = Math.max(m, x[((b * C + c) * Hh + 2 * i + di) * W + 2 * j + dj]);
                }
              }
              pooled[((b * C + c) * h2 + i) * w2 + j] = m;
            }
          }
        }
      }
      x = pooled;
      Hh = h2;
      W = w2;
    }
  }
  const cls = model.tensors.get('classifier')!;
  const nClasses = model.dims.n_classes as number;
  const out: number[][] = [];
  for (let b = 0; b < B; b++) {
    const pooled = new Float64Array(C);
    for (let c = 0; c < C; c++) {
      let acc = 0;
      for (let i = 0; i < Hh * W; i++) acc += x[(b * C + c) * Hh * W + i];
      pooled[c] = acc / (Hh * W);
    }
    const row: number[] = [];
    for (let cl = 0; cl < nClasses; cl++) {
      let acc = 0;
      for (let c = 0; c < C; c++) acc += pooled[c] * Number(cls.data[c * nClasses + cl]);
      row.push(acc);
    }
    out.push(row);
  }
  return out;
}

/** Minimal dense tensor carrier shared by the checkpoint reader, the
 * container writer and the reference forward. */

export type DType = 'f32' | 'f64' | 'i32';

export interface Tensor {
  dtype: DType;
  shape: number[];
  data: Float32Array | Float64Array | Int32Array;
}

export function numel(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

export function f32(shape: number[], data?: Float32Array): Tensor {
  return { dtype: 'f32', shape, data: data ?? new Float32Array(numel(shape)) };
}

export function i32(shape: number[], data: Int32Array): Tensor {
  return { dtype: 'i32', shape, data };
}

export function castF32(t: Tensor): Tensor {
  if (t.dtype === 'f32') return t;
  return { dtype: 'f32', shape: t.shape, data: Float32Array.from(t.data) };
}

/** Transpose a rank-2 tensor. */
export function transpose2d(t: Tensor): Tensor {
  if (t.shape.length !== 2) {
    throw new Error(`transpose needs a rank-2 tensor, got ${t.shape}`);
  }
  const [r, c] = t.shape;
  const out = new Float64Array(r * c);
  for (let i = 0; i < r; i++) {
    for (let j = 0; j < c; j++) out[j * r + i] = Number(t.data[i * c + j]);
  }
  const data =
    t.dtype === 'i32' ? Int32Array.from(out)
    : t.dtype === 'f32' ? Float32Array.from(out)
    : out;
  return { dtype: t.dtype, shape: [c, r], data };
}

export function shapesEqual(a: number[], b: number[]): boolean {
  return a.length === b.length && a.every((v, i) => v === b[i]);
}

/** Deterministic PRNG (mulberry32) + Box-Muller normals, so fixtures are
 * reproducible across runs and platforms. */
export class Rng {
  private state: number;
  private spare: number | null = null;

  constructor(seed: number) {
    this.state = seed >>> 0;
  }

  next(): number {
    this.state = (this.state + 0x6d2b79f5) >>> 0;
    let t = this.state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  }

  normal(): number {
    if (this.spare !== null) {
      const v = this.spare;
      this.spare = null;
      return v;
    }
    let u = 0;
    let v = 0;
    while (u <= 1e-12) u = this.next();
    v = this.next();
    const r = Math.sqrt(-2.0 * Math.log(u));
    this.spare = r * Math.sin(2 * Math.PI * v);
    return r * Math.cos(2 * Math.PI * v);
  }

  normalF32(shape: number[], scale = 1.0): Tensor {
    const out = new Float32Array(numel(shape));
    for (let i = 0; i < out.length; i++) out[i] = this.normal() * scale;
    return { dtype: 'f32', shape, data: out };
  }

  int(maxExclusive: number): number {
    return Math.floor(this.next() * maxExclusive);
  }
}

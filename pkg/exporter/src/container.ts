/** Writer/reader for the engine's container format: "OPTN" magic,
 * u32 LE version, u64 LE header length, UTF-8 JSON header, zero padding,
 * then 64-byte-aligned little-endian payload. Offsets are relative to the
 * payload base (first 64-byte boundary at or after the header). */

import { readFileSync, writeFileSync } from 'node:fs';

import { DType, Tensor, numel } from './tensors.js';

const MAGIC = 'OPTN';
const VERSION = 1;
const ALIGN = 64;

interface Entry {
  name: string;
  dtype: DType;
  shape: number[];
  byte_offset: number;
}

function align(n: number): number {
  return Math.ceil(n / ALIGN) * ALIGN;
}

export function writeContainer(
  path: string,
  arch: 'transformer' | 'cnn',
  dims: Record<string, unknown>,
  tensors: Map<string, Tensor>,
): void {
  const entries: Entry[] = [];
  const blobs: Array<{ offset: number; bytes: Uint8Array }> = [];
  let offset = 0;
  for (const [name, t] of tensors) {
    if (t.dtype === 'f64') {
      throw new Error(`${name}: containers store f32/i32 only; cast first`);
    }
    if (t.shape.length < 1 || t.shape.length > 4 || t.shape.some((e) => e <= 0)) {
      throw new Error(`${name}: unsupported shape [${t.shape}]`);
    }
    const bytes = new Uint8Array(t.data.buffer, t.data.byteOffset, t.data.byteLength);
    entries.push({ name, dtype: t.dtype, shape: t.shape, byte_offset: offset });
    blobs.push({ offset, bytes });
    offset = align(offset + bytes.length);
  }
  const header = Buffer.from(
    JSON.stringify({ arch, dims, tensors: entries }),
    'utf-8',
  );
  const payloadBase = align(16 + header.length);
  const out = Buffer.alloc(payloadBase + offset);
  out.write(MAGIC, 0, 'ascii');
  out.writeUInt32LE(VERSION, 4);
  out.writeBigUInt64LE(BigInt(header.length), 8);
  header.copy(out, 16);
  for (const { offset: off, bytes } of blobs) {
    out.set(bytes, payloadBase + off);
  }
  writeFileSync(path, out);
}

export interface Container {
  arch: 'transformer' | 'cnn';
  dims: Record<string, any>;
  tensors: Map<string, Tensor>;
}

export function readContainer(path: string): Container {
  const raw = readFileSync(path);
  if (raw.length < 16 || raw.subarray(0, 4).toString('ascii') !== MAGIC) {
    throw new Error(`${path}: bad magic`);
  }
  const version = raw.readUInt32LE(4);
  if (version !== VERSION) throw new Error(`${path}: unsupported version ${version}`);
  const headerLen = Number(raw.readBigUInt64LE(8));
  const header = JSON.parse(raw.subarray(16, 16 + headerLen).toString('utf-8'));
  const payloadBase = align(16 + headerLen);
  const tensors = new Map<string, Tensor>();
  for (const ent of header.tensors as Entry[]) {
    const count = numel(ent.shape);
    const start = payloadBase + ent.byte_offset;
    const copy = new Uint8Array(count * 4);
    copy.set(raw.subarray(start, start + count * 4));
    const data = ent.dtype === 'f32' ? new Float32Array(copy.buffer)
      : new Int32Array(copy.buffer);
    tensors.set(ent.name, { dtype: ent.dtype, shape: ent.shape, data });
  }
  return { arch: header.arch, dims: header.dims, tensors };
}

/** Reader/writer for the safetensors checkpoint layout:
 * u64 LE header length | JSON header | raw data. Header entries map tensor
 * names to {dtype, shape, data_offsets:[begin,end]} relative to the data
 * section. Only F32/F64/I32 are supported here. */

import { readFileSync, writeFileSync } from 'node:fs';

import { DType, Tensor, numel } from './tensors.js';

const ST_DTYPES: Record<string, { dtype: DType; bytes: number }> = {
  F32: { dtype: 'f32', bytes: 4 },
  F64: { dtype: 'f64', bytes: 8 },
  I32: { dtype: 'i32', bytes: 4 },
};

const ST_NAMES: Record<DType, string> = { f32: 'F32', f64: 'F64', i32: 'I32' };

export function writeSafetensors(path: string, tensors: Map<string, Tensor>): void {
  const header: Record<string, unknown> = {};
  let offset = 0;
  const blobs: Uint8Array[] = [];
  for (const [name, t] of tensors) {
    const bytes = new Uint8Array(t.data.buffer, t.data.byteOffset, t.data.byteLength);
    header[name] = {
      dtype: ST_NAMES[t.dtype],
      shape: t.shape,
      data_offsets: [offset, offset + bytes.length],
    };
    blobs.push(bytes);
    offset += bytes.length;
  }
  const headerBytes = Buffer.from(JSON.stringify(header), 'utf-8');
  const out = Buffer.alloc(8 + headerBytes.length + offset);
  out.writeBigUInt64LE(BigInt(headerBytes.length), 0);
  headerBytes.copy(out, 8);
  let pos = 8 + headerBytes.length;
  for (const blob of blobs) {
    out.set(blob, pos);
    pos += blob.length;
  }
  writeFileSync(path, out);
}

export function readSafetensors(path: string): Map<string, Tensor> {
  const raw = readFileSync(path);
  if (raw.length < 8) throw new Error(`${path}: not a safetensors file`);
  const headerLen = Number(raw.readBigUInt64LE(0));
  if (8 + headerLen > raw.length) {
    throw new Error(`${path}: header length ${headerLen} out of bounds`);
  }
  const header = JSON.parse(raw.subarray(8, 8 + headerLen).toString('utf-8'));
  const dataStart = 8 + headerLen;
  const tensors = new Map<string, Tensor>();
  for (const [name, entry] of Object.entries<any>(header)) {
    if (name === '__metadata__') continue;
    const st = ST_DTYPES[entry.dtype];
    if (!st) throw new Error(`${name}: unsupported checkpoint dtype ${entry.dtype}`);
    const [begin, end] = entry.data_offsets;
    const shape: number[] = entry.shape;
    const count = numel(shape);
    if (end - begin !== count * st.bytes || dataStart + end > raw.length) {
      throw new Error(`${name}: data offsets inconsistent with shape`);
    }
    const slice = raw.subarray(dataStart + begin, dataStart + end);
    const copy = new Uint8Array(slice.length);
    copy.set(slice);
    const data =
      st.dtype === 'f32' ? new Float32Array(copy.buffer)
      : st.dtype === 'f64' ? new Float64Array(copy.buffer)
      : new Int32Array(copy.buffer);
    tensors.set(name, { dtype: st.dtype, shape, data });
  }
  return tensors;
}

/**
 * tensor.ts: codec for the "BAT1" binary tensor container.
 *
 * Layout (all little-endian):
 *   bytes 0..3   magic "BAT1"
 *   bytes 4..7   u32 version (currently 1)
 *   byte  8      dtype code: 0 = f32, 1 = f64, 2 = i64
 *   byte  9      ndim (1..4)
 *   then ndim × u64 dims, then the row-major payload.
 *
 * Decoding is strict: any mismatch between header and payload raises a
 * typed error carrying one of the core error codes.
 */

import { BatLatticeError } from "./errors.js";

export type Dtype = "f32" | "f64" | "i64";

export type TypedPayload = Float32Array | Float64Array | BigInt64Array;

export interface Tensor {
  dtype: Dtype;
  dims: number[];
  /** Row-major payload; length equals the product of dims. */
  data: TypedPayload;
}

const MAGIC = "BAT1";
const VERSION = 1;
const MAX_NDIM = 4;

const DTYPE_CODES: Record<Dtype, number> = { f32: 0, f64: 1, i64: 2 };
const CODE_DTYPES: Dtype[] = ["f32", "f64", "i64"];
const ITEM_SIZE: Record<Dtype, number> = { f32: 4, f64: 8, i64: 8 };

function payloadDtype(data: TypedPayload): Dtype {
  if (data instanceof Float32Array) return "f32";
  if (data instanceof Float64Array) return "f64";
  return "i64";
}

function elementCount(dims: number[]): number {
  return dims.reduce((a, b) => a * b, 1);
}

export function encodeTensor(tensor: Tensor): Uint8Array {
  const { dims, data } = tensor;
  const dtype = payloadDtype(data);
  if (dtype !== tensor.dtype) {
    throw new BatLatticeError("BadDims", "payload type differs from declared dtype");
  }
  if (dims.length < 1 || dims.length > MAX_NDIM) {
    throw new BatLatticeError("BadDims", `ndim must be 1..${MAX_NDIM}`);
  }
  if (dims.some((d) => !Number.isInteger(d) || d < 0)) {
    throw new BatLatticeError("BadDims", "dims must be nonnegative integers");
  }
  if (elementCount(dims) !== data.length) {
    throw new BatLatticeError("BadDims", "dims do not match payload length");
  }

  const headerBytes = 10 + 8 * dims.length;
  const out = new Uint8Array(headerBytes + data.length * ITEM_SIZE[dtype]);
  const view = new DataView(out.buffer);
  for (let i = 0; i < 4; i++) out[i] = MAGIC.charCodeAt(i);
  view.setUint32(4, VERSION, true);
  out[8] = DTYPE_CODES[dtype];
  out[9] = dims.length;
  dims.forEach((d, i) => view.setBigUint64(10 + 8 * i, BigInt(d), true));

  // typed arrays are host-endian; serialize explicitly as little-endian
  const base = headerBytes;
  if (data instanceof Float32Array) {
    data.forEach((v, i) => view.setFloat32(base + 4 * i, v, true));
  } else if (data instanceof Float64Array) {
    data.forEach((v, i) => view.setFloat64(base + 8 * i, v, true));
  } else {
    data.forEach((v, i) => view.setBigInt64(base + 8 * i, v, true));
  }
  return out;
}

export function decodeTensor(blob: Uint8Array): Tensor {
  if (blob.length < 10) {
    throw new BatLatticeError("TruncatedPayload", "blob shorter than header");
  }
  const magic = String.fromCharCode(blob[0]!, blob[1]!, blob[2]!, blob[3]!);
  const view = new DataView(blob.buffer, blob.byteOffset, blob.byteLength);
  if (magic !== MAGIC) {
    throw new BatLatticeError("BadMagic", `bad magic ${JSON.stringify(magic)}`);
  }
  if (view.getUint32(4, true) !== VERSION) {
    throw new BatLatticeError("BadMagic", "unsupported container version");
  }
  const dtype = CODE_DTYPES[blob[8]!];
  if (dtype === undefined) {
    throw new BatLatticeError("BadDims", `unknown dtype code ${blob[8]}`);
  }
  const ndim = blob[9]!;
  if (ndim < 1 || ndim > MAX_NDIM) {
    throw new BatLatticeError("BadDims", `ndim must be 1..${MAX_NDIM}, got ${ndim}`);
  }
  const headerBytes = 10 + 8 * ndim;
  if (blob.length < headerBytes) {
    throw new BatLatticeError("TruncatedPayload", "blob shorter than dim table");
  }
  const dims: number[] = [];
  for (let i = 0; i < ndim; i++) {
    dims.push(Number(view.getBigUint64(10 + 8 * i, true)));
  }
  const count = elementCount(dims);
  if (blob.length !== headerBytes + count * ITEM_SIZE[dtype]) {
    throw new BatLatticeError("TruncatedPayload", "payload length differs from dims");
  }

  let data: TypedPayload;
  if (dtype === "f32") {
    const arr = new Float32Array(count);
    for (let i = 0; i < count; i++) arr[i] = view.getFloat32(headerBytes + 4 * i, true);
    data = arr;
  } else if (dtype === "f64") {
    const arr = new Float64Array(count);
    for (let i = 0; i < count; i++) arr[i] = view.getFloat64(headerBytes + 8 * i, true);
    data = arr;
  } else {
    const arr = new BigInt64Array(count);
    for (let i = 0; i < count; i++) arr[i] = view.getBigInt64(headerBytes + 8 * i, true);
    data = arr;
  }
  return { dtype, dims, data };
}

export function tensorToBase64(tensor: Tensor): string {
  return Buffer.from(encodeTensor(tensor)).toString("base64");
}

export function tensorFromBase64(b64: string): Tensor {
  return decodeTensor(new Uint8Array(Buffer.from(b64, "base64")));
}

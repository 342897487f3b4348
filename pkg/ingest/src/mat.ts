/**
 * Minimal MAT-file (level 5) reader: numeric N-D arrays, little endian,
 * with zlib-compressed elements supported.  Cell/struct/char/sparse
 * variables are skipped.  Data is returned column-major, as stored.
 */

import * as zlib from "node:zlib";

const MI_INT8 = 1;
const MI_UINT8 = 2;
const MI_INT16 = 3;
const MI_UINT16 = 4;
const MI_INT32 = 5;
const MI_UINT32 = 6;
const MI_SINGLE = 7;
const MI_DOUBLE = 9;
const MI_INT64 = 12;
const MI_UINT64 = 13;
const MI_MATRIX = 14;
const MI_COMPRESSED = 15;

const NUMERIC_CLASSES = new Set([6, 7, 8, 9, 10, 11, 12, 13, 14, 15]);

export interface MatMatrix {
  name: string;
  dims: number[];
  /** column-major values, widened to float64 */
  data: Float64Array;
}

interface RawElement {
  type: number;
  data: Buffer;
  next: number;
}

function readElement(buf: Buffer, offset: number): RawElement {
  if (offset + 8 > buf.length) {
    throw new Error(`mat element tag out of bounds at ${offset}`);
  }
  const first = buf.readUInt32LE(offset);
  const smallLen = first >>> 16;
  if (smallLen !== 0) {
    // small data element: 16-bit type + 16-bit length, data in the tag
    const type = first & 0xffff;
    return { type, data: buf.subarray(offset + 4, offset + 4 + smallLen), next: offset + 8 };
  }
  const type = first;
  const len = buf.readUInt32LE(offset + 4);
  const dataStart = offset + 8;
  if (dataStart + len > buf.length) {
    throw new Error(`mat element payload out of bounds at ${offset}`);
  }
  const padded = type === MI_COMPRESSED ? len : Math.ceil(len / 8) * 8;
  return { type, data: buf.subarray(dataStart, dataStart + len), next: dataStart + padded };
}

function numericToFloat64(type: number, data: Buffer, count: number): Float64Array {
  const out = new Float64Array(count);
  switch (type) {
    case MI_INT8:
      for (let i = 0; i < count; i++) out[i] = data.readInt8(i);
      return out;
    case MI_UINT8:
      for (let i = 0; i < count; i++) out[i] = data.readUInt8(i);
      return out;
    case MI_INT16:
      for (let i = 0; i < count; i++) out[i] = data.readInt16LE(2 * i);
      return out;
    case MI_UINT16:
      for (let i = 0; i < count; i++) out[i] = data.readUInt16LE(2 * i);
      return out;
    case MI_INT32:
      for (let i = 0; i < count; i++) out[i] = data.readInt32LE(4 * i);
      return out;
    case MI_UINT32:
      for (let i = 0; i < count; i++) out[i] = data.readUInt32LE(4 * i);
      return out;
    case MI_SINGLE:
      for (let i = 0; i < count; i++) out[i] = data.readFloatLE(4 * i);
      return out;
    case MI_DOUBLE:
      for (let i = 0; i < count; i++) out[i] = data.readDoubleLE(8 * i);
      return out;
    case MI_INT64:
      for (let i = 0; i < count; i++) out[i] = Number(data.readBigInt64LE(8 * i));
      return out;
    case MI_UINT64:
      for (let i = 0; i < count; i++) out[i] = Number(data.readBigUInt64LE(8 * i));
      return out;
    default:
      throw new Error(`unsupported mat numeric storage type ${type}`);
  }
}

function parseMatrix(data: Buffer): MatMatrix | null {
  let offset = 0;
  const flags = readElement(data, offset);
  if (flags.type !== MI_UINT32) throw new Error("matrix missing array flags");
  const arrayClass = flags.data.readUInt32LE(0) & 0xff;
  offset = flags.next;

  const dimsEl = readElement(data, offset);
  if (dimsEl.type !== MI_INT32) throw new Error("matrix missing dimensions");
  const dims: number[] = [];
  for (let i = 0; i < dimsEl.data.length / 4; i++) dims.push(dimsEl.data.readInt32LE(4 * i));
  offset = dimsEl.next;

  const nameEl = readElement(data, offset);
  if (nameEl.type !== MI_INT8) throw new Error("matrix missing name");
  const name = nameEl.data.toString("ascii");
  offset = nameEl.next;

  if (!NUMERIC_CLASSES.has(arrayClass)) return null; // cell/struct/char/sparse
  const count = dims.reduce((a, b) => a * b, 1);
  const real = readElement(data, offset);
  return { name, dims, data: numericToFloat64(real.type, real.data, count) };
}

/** Parse every top-level numeric variable in a MAT 5 buffer. */
export function readMatBuffer(buf: Buffer): Map<string, MatMatrix> {
  if (buf.length < 128) throw new Error("not a MAT 5 file: header too short");
  const endian = buf.toString("ascii", 126, 128);
  if (endian === "MI") throw new Error("big-endian MAT files are not supported");
  if (endian !== "IM") throw new Error("not a MAT 5 file: bad endian indicator");

  const out = new Map<string, MatMatrix>();
  let offset = 128;
  while (offset + 8 <= buf.length) {
    const el = readElement(buf, offset);
    let payloadType = el.type;
    let payload = el.data;
    if (payloadType === MI_COMPRESSED) {
      const inflated = zlib.inflateSync(payload);
      const inner = readElement(inflated, 0);
      payloadType = inner.type;
      payload = inner.data;
    }
    if (payloadType === MI_MATRIX) {
      const matrix = parseMatrix(payload);
      if (matrix !== null) out.set(matrix.name, matrix);
    }
    offset = el.next;
  }
  return out;
}

/** Column `col` (0-based) of a column-major 2-D matrix. */
export function matrixColumn(m: MatMatrix, col: number): Float64Array {
  if (m.dims.length !== 2) {
    throw new Error(`expected a 2-D matrix, got dims [${m.dims.join(", ")}]`);
  }
  const [rows, cols] = m.dims;
  if (col < 0 || col >= cols) {
    throw new Error(`column ${col} out of range (matrix has ${cols})`);
  }
  return m.data.slice(col * rows, (col + 1) * rows);
}

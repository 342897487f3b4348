/**
 * Canonical signal format shared with the main toolkit.
 *
 * Layout: magic "MSG1", u8 version, u32 LE sampling rate (integer Hz),
 * u64 LE sample count, little-endian float64 samples, then a u32
 * length-prefixed UTF-8 JSON provenance object.
 */

import * as fs from "node:fs";
import * as path from "node:path";

export const SIGNAL_MAGIC = "MSG1";
export const SIGNAL_FORMAT_VERSION = 1;

export interface CanonicalSignal {
  fs: number;
  samples: Float64Array;
  provenance: Record<string, string>;
}

export interface SignalMeta {
  fs: number;
  sampleCount: number;
  provenance: Record<string, string>;
}

function sortedJson(obj: Record<string, string>): string {
  const keys = Object.keys(obj).sort();
  const ordered: Record<string, string> = {};
  for (const k of keys) ordered[k] = obj[k];
  return JSON.stringify(ordered);
}

export function encodeSignal(sig: CanonicalSignal): Buffer {
  if (!Number.isInteger(sig.fs) || sig.fs <= 0 || sig.fs > 0xffffffff) {
    throw new Error(`canonical format stores integer fs in Hz, got ${sig.fs}`);
  }
  if (sig.samples.length === 0) {
    throw new Error("refusing to write an empty signal");
  }
  for (const v of sig.samples) {
    if (!Number.isFinite(v)) throw new Error("samples contain non-finite values");
  }
  const prov = Buffer.from(sortedJson(sig.provenance), "utf-8");
  const buf = Buffer.alloc(17 + 8 * sig.samples.length + 4 + prov.length);
  buf.write(SIGNAL_MAGIC, 0, "ascii");
  buf.writeUInt8(SIGNAL_FORMAT_VERSION, 4);
  buf.writeUInt32LE(sig.fs, 5);
  buf.writeBigUInt64LE(BigInt(sig.samples.length), 9);
  for (let i = 0; i < sig.samples.length; i++) {
    buf.writeDoubleLE(sig.samples[i], 17 + 8 * i);
  }
  buf.writeUInt32LE(prov.length, 17 + 8 * sig.samples.length);
  prov.copy(buf, 21 + 8 * sig.samples.length);
  return buf;
}

export function decodeSignal(buf: Buffer): CanonicalSignal {
  const meta = decodeHeader(buf);
  const n = meta.sampleCount;
  if (buf.length < 17 + 8 * n + 4) throw new Error("canonical signal truncated");
  const samples = new Float64Array(n);
  for (let i = 0; i < n; i++) samples[i] = buf.readDoubleLE(17 + 8 * i);
  return { fs: meta.fs, samples, provenance: decodeProvenance(buf, n) };
}

function decodeHeader(buf: Buffer): SignalMeta {
  if (buf.length < 17 || buf.toString("ascii", 0, 4) !== SIGNAL_MAGIC) {
    throw new Error("not a canonical signal: bad magic");
  }
  const version = buf.readUInt8(4);
  if (version !== SIGNAL_FORMAT_VERSION) {
    throw new Error(`unsupported canonical signal version ${version}`);
  }
  const fsHz = buf.readUInt32LE(5);
  const count = buf.readBigUInt64LE(9);
  if (count > BigInt(Number.MAX_SAFE_INTEGER)) {
    throw new Error("sample count exceeds safe integer range");
  }
  return { fs: fsHz, sampleCount: Number(count), provenance: {} };
}

function decodeProvenance(buf: Buffer, n: number): Record<string, string> {
  const provLen = buf.readUInt32LE(17 + 8 * n);
  const start = 21 + 8 * n;
  if (buf.length < start + provLen) {
    throw new Error("canonical signal truncated in provenance");
  }
  if (provLen === 0) return {};
  return JSON.parse(buf.toString("utf-8", start, start + provLen));
}

export function writeSignal(sig: CanonicalSignal, filePath: string): void {
  // temp + rename so interrupted conversions never leave partial files
  const dir = path.dirname(filePath);
  const tmp = path.join(dir, `.${path.basename(filePath)}.${process.pid}.tmp`);
  fs.writeFileSync(tmp, encodeSignal(sig));
  fs.renameSync(tmp, filePath);
}

export function readSignal(filePath: string): CanonicalSignal {
  return decodeSignal(fs.readFileSync(filePath));
}

/** Header and provenance only; skips loading the sample payload. */
export function readSignalMeta(filePath: string): SignalMeta {
  const fd = fs.openSync(filePath, "r");
  try {
    const head = Buffer.alloc(17);
    if (fs.readSync(fd, head, 0, 17, 0) !== 17) {
      throw new Error("not a canonical signal: too short");
    }
    const meta = decodeHeader(head);
    const n = meta.sampleCount;
    const lenBuf = Buffer.alloc(4);
    fs.readSync(fd, lenBuf, 0, 4, 17 + 8 * n);
    const provLen = lenBuf.readUInt32LE(0);
    let provenance: Record<string, string> = {};
    if (provLen > 0) {
      const provBuf = Buffer.alloc(provLen);
      const got = fs.readSync(fd, provBuf, 0, provLen, 21 + 8 * n);
      if (got !== provLen) throw new Error("canonical signal truncated in provenance");
      provenance = JSON.parse(provBuf.toString("utf-8"));
    }
    return { fs: meta.fs, sampleCount: n, provenance };
  } finally {
    fs.closeSync(fd);
  }
}

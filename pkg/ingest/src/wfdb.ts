/**
 * WFDB record reader for the subset the NSRD corpus needs: text .hea
 * headers and single-segment .dat signal files in format 212 (12-bit
 * packed pairs) or format 16 (little-endian int16), multiplexed by frame.
 * Samples are returned in physical units: (adc - baseline) / gain.
 */

import * as fs from "node:fs";
import * as path from "node:path";

const DEFAULT_GAIN = 200; // WFDB convention when the header says 0

export interface WfdbSignalSpec {
  fileName: string;
  format: number;
  gain: number;
  baseline: number;
  adcZero: number;
  units: string;
  description: string;
}

export interface WfdbHeader {
  record: string;
  nSignals: number;
  fs: number;
  nSamples: number;
  signals: WfdbSignalSpec[];
}

export function parseHeader(text: string, recordName: string): WfdbHeader {
  const lines = text
    .split(/\r?\n/)
    .map((l) => l.trim())
    .filter((l) => l.length > 0 && !l.startsWith("#"));
  if (lines.length === 0) throw new Error("empty header file");

  const head = lines[0].split(/\s+/);
  if (head.length < 2) throw new Error(`malformed record line: ${lines[0]}`);
  const record = head[0].split("/")[0];
  const nSignals = parseInt(head[1], 10);
  const fs = head.length > 2 ? parseFloat(head[2].split("/")[0]) : 250;
  const nSamples = head.length > 3 ? parseInt(head[3], 10) : 0;
  if (!Number.isFinite(fs) || fs <= 0) throw new Error(`bad sampling rate in ${lines[0]}`);

  const signals: WfdbSignalSpec[] = [];
  for (let i = 1; i <= nSignals; i++) {
    if (i >= lines.length) throw new Error(`header lists ${nSignals} signals, found ${i - 1}`);
    const tok = lines[i].split(/\s+/);
    if (tok.length < 2) throw new Error(`malformed signal line: ${lines[i]}`);
    const fileName = tok[0];
    const format = parseInt(tok[1].split(/[x:+]/)[0], 10);

    let gain = DEFAULT_GAIN;
    let baseline: number | null = null;
    let units = "mV";
    if (tok.length > 2) {
      // e.g. "200", "200(0)", "200(0)/mV"
      const m = tok[2].match(/^(-?[\d.]+)(?:\((-?\d+)\))?(?:\/(.+))?$/);
      if (!m) throw new Error(`malformed gain field: ${tok[2]}`);
      gain = parseFloat(m[1]);
      if (gain === 0) gain = DEFAULT_GAIN;
      if (m[2] !== undefined) baseline = parseInt(m[2], 10);
      if (m[3] !== undefined) units = m[3];
    }
    const adcZero = tok.length > 4 ? parseInt(tok[4], 10) : 0;
    signals.push({
      fileName,
      format,
      gain,
      baseline: baseline !== null ? baseline : adcZero,
      adcZero,
      units,
      description: tok.slice(8).join(" "),
    });
  }
  return { record: record || recordName, nSignals, fs, nSamples, signals };
}

function unpack212(buf: Buffer, totalSamples: number): Int32Array {
  const out = new Int32Array(totalSamples);
  let idx = 0;
  for (let o = 0; o + 2 <= buf.length && idx < totalSamples; o += 3) {
    const b0 = buf[o];
    const b1 = buf[o + 1];
    let s0 = ((b1 & 0x0f) << 8) | b0;
    if (s0 >= 2048) s0 -= 4096;
    out[idx++] = s0;
    if (idx < totalSamples && o + 2 < buf.length) {
      const b2 = buf[o + 2];
      let s1 = ((b1 & 0xf0) << 4) | b2;
      if (s1 >= 2048) s1 -= 4096;
      out[idx++] = s1;
    }
  }
  if (idx < totalSamples) {
    throw new Error(`format 212 file too short: got ${idx} of ${totalSamples} samples`);
  }
  return out;
}

function unpack16(buf: Buffer, totalSamples: number): Int32Array {
  if (buf.length < 2 * totalSamples) {
    throw new Error(`format 16 file too short: got ${buf.length / 2} of ${totalSamples}`);
  }
  const out = new Int32Array(totalSamples);
  for (let i = 0; i < totalSamples; i++) out[i] = buf.readInt16LE(2 * i);
  return out;
}

export interface WfdbRecord {
  header: WfdbHeader;
  /** one physical-units array per signal */
  signals: Float64Array[];
}

export function readRecord(recordBase: string): WfdbRecord {
  const heaPath = recordBase.endsWith(".hea") ? recordBase : `${recordBase}.hea`;
  const dir = path.dirname(heaPath);
  const recordName = path.basename(heaPath, ".hea");
  const header = parseHeader(fs.readFileSync(heaPath, "utf-8"), recordName);

  const formats = new Set(header.signals.map((s) => s.format));
  if (formats.size !== 1) {
    throw new Error("mixed-format records are not supported");
  }
  const format = header.signals[0].format;
  const datFiles = new Set(header.signals.map((s) => s.fileName));
  if (datFiles.size !== 1) {
    throw new Error("multi-file records are not supported");
  }
  const datPath = path.join(dir, header.signals[0].fileName);
  const raw = fs.readFileSync(datPath);

  let nSamples = header.nSamples;
  if (nSamples <= 0) {
    const perFrame = header.nSignals;
    nSamples =
      format === 212
        ? Math.floor((raw.length * 2) / 3 / perFrame)
        : Math.floor(raw.length / 2 / perFrame);
  }
  const total = nSamples * header.nSignals;
  const flat = format === 212 ? unpack212(raw, total) : format === 16 ? unpack16(raw, total) : null;
  if (flat === null) throw new Error(`unsupported WFDB format ${format}`);

  const signals = header.signals.map((spec, s) => {
    const out = new Float64Array(nSamples);
    for (let i = 0; i < nSamples; i++) {
      out[i] = (flat[i * header.nSignals + s] - spec.baseline) / spec.gain;
    }
    return out;
  });
  return { header, signals };
}

/**
 * Format translation only: source recordings become canonical files at
 * their native rates with provenance filled in.  No filtering and no
 * resampling happens here; all signal conditioning belongs to the main
 * toolkit.
 */

import * as path from "node:path";
import * as fs from "node:fs";

import { readMatBuffer, matrixColumn } from "./mat";
import { readRecord } from "./wfdb";
import { writeSignal, CanonicalSignal } from "./msg1";

export const NINAPRO_FS_HZ = 2000;
export const NINAPRO_DATASET_ID = "ninapro-db2";
export const NSRD_DATASET_ID = "mitbih-nsrd";

export interface NinaproOptions {
  subject?: number;
  exercise?: number;
  fs?: number;
}

function parseNinaproName(matPath: string): { subject?: number; exercise?: number } {
  const m = path.basename(matPath).match(/S(\d+)[_-]E(\d+)/i);
  if (!m) return {};
  return { subject: parseInt(m[1], 10), exercise: parseInt(m[2], 10) };
}

/**
 * One canonical file per requested 1-based channel of the `emg` matrix.
 * Returns the written paths in channel order.
 */
export function convertNinapro(
  matPath: string,
  channels: number[],
  outDir: string,
  opts: NinaproOptions = {}
): string[] {
  const parsed = parseNinaproName(matPath);
  const subject = opts.subject ?? parsed.subject;
  const exercise = opts.exercise ?? parsed.exercise;
  if (subject === undefined || exercise === undefined) {
    throw new Error(
      `cannot infer subject/exercise from ${path.basename(matPath)}; pass them explicitly`
    );
  }
  const fsHz = opts.fs ?? NINAPRO_FS_HZ;
  const variables = readMatBuffer(fs.readFileSync(matPath));
  const emg = variables.get("emg");
  if (emg === undefined) {
    throw new Error(`${matPath} has no 'emg' variable (found: ${[...variables.keys()].join(", ")})`);
  }
  if (emg.dims.length !== 2) {
    throw new Error(`'emg' must be 2-D, got dims [${emg.dims.join(", ")}]`);
  }
  const nChannels = emg.dims[1];
  fs.mkdirSync(outDir, { recursive: true });
  const written: string[] = [];
  for (const channel of channels) {
    if (!Number.isInteger(channel) || channel < 1 || channel > nChannels) {
      throw new Error(`channel ${channel} out of range 1..${nChannels}`);
    }
    const sig: CanonicalSignal = {
      fs: fsHz,
      samples: matrixColumn(emg, channel - 1),
      provenance: {
        dataset: NINAPRO_DATASET_ID,
        subject: `s${subject}`,
        exercise: String(exercise),
        channel: String(channel),
        source: path.basename(matPath),
      },
    };
    const dest = path.join(outDir, `ninapro_s${subject}_e${exercise}_ch${channel}.msg1`);
    writeSignal(sig, dest);
    written.push(dest);
  }
  return written;
}

/** One canonical file for one 1-based channel of a WFDB record. */
export function convertWfdb(recordBase: string, channel: number, outDir: string): string {
  const { header, signals } = readRecord(recordBase);
  if (!Number.isInteger(channel) || channel < 1 || channel > header.nSignals) {
    throw new Error(`channel ${channel} out of range 1..${header.nSignals}`);
  }
  if (!Number.isInteger(header.fs)) {
    throw new Error(`record ${header.record} has non-integer fs ${header.fs}`);
  }
  fs.mkdirSync(outDir, { recursive: true });
  const sig: CanonicalSignal = {
    fs: header.fs,
    samples: signals[channel - 1],
    provenance: {
      dataset: NSRD_DATASET_ID,
      subject: header.record,
      record: header.record,
      channel: String(channel),
      units: header.signals[channel - 1].units,
    },
  };
  const dest = path.join(outDir, `nsrd_${header.record}_ch${channel}.msg1`);
  writeSignal(sig, dest);
  return dest;
}

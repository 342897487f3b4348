/**
 * Emit the evaluation-protocol manifest over a converted corpus.
 *
 * sEMG side: channel-2 recordings of exercises 1 and 3 form the train/val
 * pool; exercise-2 recordings of channels 9-12 form the test pool.  When a
 * subject has recordings in both pools (as in the full corpus, where every
 * subject did every exercise), subjects are assigned by sorted order:
 * the first 75% stay train/val, the rest are test-only.  Within train/val,
 * the last 20% of subjects become validation so the splits stay disjoint
 * by subject.
 *
 * ECG side: records 16420, 16539 and 16786 are the fixed test artifacts;
 * of the remaining records the last three (sorted) validate and the rest
 * train.
 *
 * SNR grids: -15..-5 dB step 2 for train/val (6 levels), -14..0 dB step 2
 * for test (8 levels); 10 artifact draws per train/val segment, 1 for test.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { readSignalMeta } from "./msg1";
import { NINAPRO_DATASET_ID, NSRD_DATASET_ID } from "./convert";

export const TEST_ECG_RECORDS = ["16420", "16539", "16786"];
export const TRAINVAL_SNR_GRID_DB = [-15, -13, -11, -9, -7, -5];
export const TEST_SNR_GRID_DB = [-14, -12, -10, -8, -6, -4, -2, 0];
export const TRAINVAL_CHANNEL = 2;
export const TRAINVAL_EXERCISES = new Set([1, 3]);
export const TEST_EXERCISE = 2;
export const TEST_CHANNELS = new Set([9, 10, 11, 12]);

export interface ManifestEntry {
  path: string;
  subject: string;
  split: "train" | "val" | "test";
}

export interface Manifest {
  schema_version: number;
  seed: number;
  clean: ManifestEntry[];
  artifact: ManifestEntry[];
  snr_grids_db: Record<string, number[]>;
  draws_per_segment: Record<string, number>;
}

interface ScannedFile {
  relPath: string;
  provenance: Record<string, string>;
}

function scanCanonicalFiles(dir: string): ScannedFile[] {
  return fs
    .readdirSync(dir)
    .filter((name) => name.endsWith(".msg1"))
    .sort()
    .map((name) => ({
      relPath: name,
      provenance: readSignalMeta(path.join(dir, name)).provenance,
    }));
}

function numericSort(values: string[]): string[] {
  return [...values].sort((a, b) => {
    const na = parseInt(a.replace(/\D/g, ""), 10);
    const nb = parseInt(b.replace(/\D/g, ""), 10);
    if (Number.isFinite(na) && Number.isFinite(nb) && na !== nb) return na - nb;
    return a < b ? -1 : a > b ? 1 : 0;
  });
}

export function emitPaperManifest(convertedDir: string, seed = 0): Manifest {
  const files = scanCanonicalFiles(convertedDir);

  const trainvalBySubject = new Map<string, string[]>();
  const testBySubject = new Map<string, string[]>();
  const ecgByRecord = new Map<string, string[]>();

  for (const f of files) {
    const p = f.provenance;
    if (p.dataset === NINAPRO_DATASET_ID) {
      const exercise = parseInt(p.exercise ?? "", 10);
      const channel = parseInt(p.channel ?? "", 10);
      if (TRAINVAL_EXERCISES.has(exercise) && channel === TRAINVAL_CHANNEL) {
        const list = trainvalBySubject.get(p.subject) ?? [];
        list.push(f.relPath);
        trainvalBySubject.set(p.subject, list);
      } else if (exercise === TEST_EXERCISE && TEST_CHANNELS.has(channel)) {
        const list = testBySubject.get(p.subject) ?? [];
        list.push(f.relPath);
        testBySubject.set(p.subject, list);
      }
    } else if (p.dataset === NSRD_DATASET_ID) {
      const list = ecgByRecord.get(p.subject) ?? [];
      list.push(f.relPath);
      ecgByRecord.set(p.subject, list);
    }
  }

  const missing: string[] = [];
  if (trainvalBySubject.size === 0) {
    missing.push("sEMG train/val recordings (exercises 1/3, channel 2)");
  }
  if (testBySubject.size === 0) {
    missing.push("sEMG test recordings (exercise 2, channels 9-12)");
  }
  if (ecgByRecord.size === 0) missing.push("ECG records");
  if (missing.length > 0) {
    throw new Error(`converted corpus is incomplete; missing: ${missing.join("; ")}`);
  }

  // resolve subjects present in both pools by sorted order: first 75% train/val
  const overlap = [...trainvalBySubject.keys()].filter((s) => testBySubject.has(s));
  if (overlap.length > 0) {
    const all = numericSort([
      ...new Set([...trainvalBySubject.keys(), ...testBySubject.keys()]),
    ]);
    const keepTrainval = new Set(all.slice(0, Math.max(1, Math.round(0.75 * all.length))));
    for (const subject of overlap) {
      if (keepTrainval.has(subject)) testBySubject.delete(subject);
      else trainvalBySubject.delete(subject);
    }
    if (trainvalBySubject.size === 0 || testBySubject.size === 0) {
      throw new Error("subject overlap resolution emptied a split; corpus too small");
    }
  }

  const trainvalSubjects = numericSort([...trainvalBySubject.keys()]);
  const valCount = Math.max(trainvalSubjects.length > 1 ? 1 : 0,
    Math.round(0.2 * trainvalSubjects.length));
  const valSubjects = new Set(trainvalSubjects.slice(trainvalSubjects.length - valCount));

  const clean: ManifestEntry[] = [];
  for (const subject of trainvalSubjects) {
    const split = valSubjects.has(subject) ? "val" : "train";
    for (const rel of trainvalBySubject.get(subject)!.sort()) {
      clean.push({ path: rel, subject, split });
    }
  }
  for (const subject of numericSort([...testBySubject.keys()])) {
    for (const rel of testBySubject.get(subject)!.sort()) {
      clean.push({ path: rel, subject, split: "test" });
    }
  }

  const ecgRecords = numericSort([...ecgByRecord.keys()]);
  const testRecords = ecgRecords.filter((r) => TEST_ECG_RECORDS.includes(r));
  const rest = ecgRecords.filter((r) => !TEST_ECG_RECORDS.includes(r));
  const valRecordCount = Math.min(3, Math.max(0, rest.length - 1));
  const valRecords = new Set(rest.slice(rest.length - valRecordCount));
  const artifact: ManifestEntry[] = [];
  for (const record of ecgRecords) {
    const split = testRecords.includes(record)
      ? "test"
      : valRecords.has(record)
        ? "val"
        : "train";
    for (const rel of ecgByRecord.get(record)!.sort()) {
      artifact.push({ path: rel, subject: record, split });
    }
  }

  const gaps: string[] = [];
  for (const split of ["train", "val", "test"] as const) {
    const hasClean = clean.some((e) => e.split === split);
    const hasArtifact = artifact.some((e) => e.split === split);
    if (hasClean && !hasArtifact) {
      gaps.push(`split '${split}' has sEMG segments but no ECG artifacts`);
    }
  }
  if (gaps.length > 0) {
    throw new Error(`cannot emit a usable manifest: ${gaps.join("; ")}`);
  }

  return {
    schema_version: 1,
    seed,
    clean,
    artifact,
    snr_grids_db: {
      train: TRAINVAL_SNR_GRID_DB,
      val: TRAINVAL_SNR_GRID_DB,
      test: TEST_SNR_GRID_DB,
    },
    draws_per_segment: { train: 10, val: 10, test: 1 },
  };
}

export function writeManifest(manifest: Manifest, outPath: string): void {
  const tmp = `${outPath}.${process.pid}.tmp`;
  fs.writeFileSync(tmp, JSON.stringify(manifest, null, 2) + "\n");
  fs.renameSync(tmp, outPath);
}

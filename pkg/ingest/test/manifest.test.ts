import { test } from "node:test";
import * as assert from "node:assert/strict";
import * as fs from "node:fs";
import * as path from "node:path";

import { writeSignal } from "../src/msg1";
import {
  emitPaperManifest,
  writeManifest,
  TEST_ECG_RECORDS,
} from "../src/manifest";
import { main as cliMain } from "../src/cli";
import { pythonAvailable, repoSrcPath, tmpDir } from "./util";
import { execFileSync } from "node:child_process";

const NSRD_RECORDS = [
  "16265", "16272", "16273", "16420", "16483", "16539", "16773", "16786",
  "16795", "17052",
];

/** Synthesize a converted corpus: per-subject channel-2 recordings for
 * exercises 1/3, exercise-2 recordings on channels 9-12 for test-only
 * subjects, and a set of NSRD records. */
function makeConvertedCorpus(dir: string, opts: { overlap: boolean }): void {
  const semgSubjects = [1, 2, 3, 4, 5, 6, 7, 8];
  const testOnlySubjects = opts.overlap ? [] : [9, 10];
  const samples = new Float64Array(Array.from({ length: 256 }, (_, i) => Math.sin(i / 3)));

  for (const s of semgSubjects) {
    for (const e of [1, 3]) {
      writeSignal(
        {
          fs: 2000,
          samples,
          provenance: {
            dataset: "ninapro-db2", subject: `s${s}`,
            exercise: String(e), channel: "2",
          },
        },
        path.join(dir, `ninapro_s${s}_e${e}_ch2.msg1`)
      );
    }
  }
  const testSubjects = opts.overlap ? semgSubjects.slice(-2) : testOnlySubjects;
  for (const s of testSubjects) {
    for (const ch of [9, 10, 11, 12]) {
      writeSignal(
        {
          fs: 2000,
          samples,
          provenance: {
            dataset: "ninapro-db2", subject: `s${s}`,
            exercise: "2", channel: String(ch),
          },
        },
        path.join(dir, `ninapro_s${s}_e2_ch${ch}.msg1`)
      );
    }
  }
  for (const record of NSRD_RECORDS) {
    writeSignal(
      {
        fs: 128,
        samples,
        provenance: { dataset: "mitbih-nsrd", subject: record, channel: "1" },
      },
      path.join(dir, `nsrd_${record}_ch1.msg1`)
    );
  }
}

test("manifest encodes the protocol split", () => {
  const dir = tmpDir("manifest-");
  makeConvertedCorpus(dir, { overlap: false });
  const manifest = emitPaperManifest(dir, 7);

  assert.equal(manifest.schema_version, 1);
  assert.equal(manifest.seed, 7);
  assert.equal(manifest.snr_grids_db.train.length, 6);
  assert.equal(manifest.snr_grids_db.val.length, 6);
  assert.equal(manifest.snr_grids_db.test.length, 8);
  assert.deepEqual(manifest.snr_grids_db.train, [-15, -13, -11, -9, -7, -5]);
  assert.deepEqual(manifest.snr_grids_db.test, [-14, -12, -10, -8, -6, -4, -2, 0]);
  assert.deepEqual(manifest.draws_per_segment, { train: 10, val: 10, test: 1 });

  const testEcg = new Set(
    manifest.artifact.filter((e) => e.split === "test").map((e) => e.subject)
  );
  assert.deepEqual([...testEcg].sort(), [...TEST_ECG_RECORDS].sort());

  // clean test entries are exercise-2 channels 9-12 of the held-out subjects
  const testClean = manifest.clean.filter((e) => e.split === "test");
  assert.equal(testClean.length, 2 * 4);
  assert.ok(testClean.every((e) => /e2_ch(9|1[012])/.test(e.path)));

  // disjoint subjects across splits on both sides
  for (const side of [manifest.clean, manifest.artifact]) {
    const bySplit = new Map<string, Set<string>>();
    for (const e of side) {
      const set = bySplit.get(e.split) ?? new Set();
      set.add(e.subject);
      bySplit.set(e.split, set);
    }
    const splits = [...bySplit.keys()];
    for (let i = 0; i < splits.length; i++) {
      for (let j = i + 1; j < splits.length; j++) {
        const a = bySplit.get(splits[i])!;
        const b = bySplit.get(splits[j])!;
        for (const s of a) assert.ok(!b.has(s), `${s} leaks between splits`);
      }
    }
  }
});

test("overlapping subjects are partitioned, never duplicated", () => {
  const dir = tmpDir("manifest-");
  makeConvertedCorpus(dir, { overlap: true });
  const manifest = emitPaperManifest(dir, 0);
  const trainval = new Set(
    manifest.clean.filter((e) => e.split !== "test").map((e) => e.subject)
  );
  const testSubjects = new Set(
    manifest.clean.filter((e) => e.split === "test").map((e) => e.subject)
  );
  assert.ok(testSubjects.size > 0);
  for (const s of testSubjects) assert.ok(!trainval.has(s));
});

test("incomplete corpora are rejected with the missing piece named", () => {
  const dir = tmpDir("manifest-");
  assert.throws(() => emitPaperManifest(dir, 0), /missing/);
});

test("emit is deterministic", () => {
  const dir = tmpDir("manifest-");
  makeConvertedCorpus(dir, { overlap: false });
  const a = JSON.stringify(emitPaperManifest(dir, 1));
  const b = JSON.stringify(emitPaperManifest(dir, 1));
  assert.equal(a, b);
});

test("cli emit-manifest writes the file", () => {
  const dir = tmpDir("manifest-");
  makeConvertedCorpus(dir, { overlap: false });
  const out = path.join(dir, "manifest.json");
  assert.equal(cliMain(["emit-manifest", "--dir", dir, "--out", out, "--seed", "3"]), 0);
  const parsed = JSON.parse(fs.readFileSync(out, "utf-8"));
  assert.equal(parsed.seed, 3);
});

test("emitted manifest passes the primary validator", { skip: !pythonAvailable() }, () => {
  const dir = tmpDir("manifest-");
  makeConvertedCorpus(dir, { overlap: false });
  const out = path.join(dir, "manifest.json");
  writeManifest(emitPaperManifest(dir, 0), out);
  const result = execFileSync(
    "python3", ["-m", "msemg", "mix", "--manifest", out, "--validate-only"],
    { encoding: "utf-8", env: { ...process.env, PYTHONPATH: repoSrcPath() } }
  );
  assert.match(result, /is valid/);
});

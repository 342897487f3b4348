#!/usr/bin/env node
/**
 * msemg-ingest: convert source corpora into the canonical signal format.
 *
 *   msemg-ingest convert-ninapro --mat S1_E1_A1.mat --channels 9,10,11,12 --out-dir DIR
 *   msemg-ingest convert-wfdb --record 16420 --channel 1 --out-dir DIR
 *   msemg-ingest emit-manifest --dir DIR [--out DIR/manifest.json] [--seed 0]
 */

import * as path from "node:path";

import { convertNinapro, convertWfdb } from "./convert";
import { emitPaperManifest, writeManifest } from "./manifest";

interface Flags {
  [key: string]: string;
}

function parseFlags(argv: string[]): Flags {
  const flags: Flags = {};
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (!arg.startsWith("--")) throw new Error(`unexpected argument ${arg}`);
    const key = arg.slice(2);
    const value = argv[i + 1];
    if (value === undefined || value.startsWith("--")) {
      throw new Error(`flag --${key} needs a value`);
    }
    flags[key] = value;
    i++;
  }
  return flags;
}

function required(flags: Flags, key: string): string {
  const value = flags[key];
  if (value === undefined) throw new Error(`missing required flag --${key}`);
  return value;
}

export function main(argv: string[]): number {
  const [command, ...rest] = argv;
  try {
    switch (command) {
      case "convert-ninapro": {
        const flags = parseFlags(rest);
        const channels = required(flags, "channels")
          .split(",")
          .map((c) => parseInt(c.trim(), 10));
        const written = convertNinapro(required(flags, "mat"), channels,
          required(flags, "out-dir"), {
            subject: flags.subject !== undefined ? parseInt(flags.subject, 10) : undefined,
            exercise: flags.exercise !== undefined ? parseInt(flags.exercise, 10) : undefined,
            fs: flags.fs !== undefined ? parseInt(flags.fs, 10) : undefined,
          });
        console.log(`wrote ${written.length} channel file(s):`);
        for (const p of written) console.log(`  ${p}`);
        return 0;
      }
      case "convert-wfdb": {
        const flags = parseFlags(rest);
        const channel = flags.channel !== undefined ? parseInt(flags.channel, 10) : 1;
        const written = convertWfdb(required(flags, "record"), channel,
          required(flags, "out-dir"));
        console.log(`wrote ${written}`);
        return 0;
      }
      case "emit-manifest": {
        const flags = parseFlags(rest);
        const dir = required(flags, "dir");
        const out = flags.out ?? path.join(dir, "manifest.json");
        const seed = flags.seed !== undefined ? parseInt(flags.seed, 10) : 0;
        const manifest = emitPaperManifest(dir, seed);
        writeManifest(manifest, out);
        const counts = (split: string) =>
          `${manifest.clean.filter((e) => e.split === split).length} sEMG / ` +
          `${manifest.artifact.filter((e) => e.split === split).length} ECG`;
        console.log(`wrote ${out}`);
        console.log(`  train: ${counts("train")}; val: ${counts("val")}; test: ${counts("test")}`);
        return 0;
      }
      default:
        console.error(
          "usage: msemg-ingest <convert-ninapro | convert-wfdb | emit-manifest> [flags]"
        );
        return 2;
    }
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)));
}

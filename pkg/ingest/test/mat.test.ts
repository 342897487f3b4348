import { test } from "node:test";
import * as assert from "node:assert/strict";
import * as fs from "node:fs";
import * as path from "node:path";
import * as zlib from "node:zlib";

import { matrixColumn, readMatBuffer } from "../src/mat";
import { pythonAvailable, runPython, tmpDir } from "./util";

/**
 * Hand-built MAT 5 writer for a single 2-D double matrix, independent of
 * any library, so the reader is checked against the format spec itself.
 */
function buildMatFile(name: string, rows: number, cols: number,
  values: number[], compress: boolean): Buffer {
  const header = Buffer.alloc(128);
  header.write("MATLAB 5.0 MAT-file, hand-built fixture", 0, "ascii");
  header.writeUInt16LE(0x0100, 124);
  header.write("IM", 126, "ascii");

  const pad8 = (b: Buffer) =>
    b.length % 8 === 0 ? b : Buffer.concat([b, Buffer.alloc(8 - (b.length % 8))]);
  const element = (type: number, payload: Buffer) => {
    const tag = Buffer.alloc(8);
    tag.writeUInt32LE(type, 0);
    tag.writeUInt32LE(payload.length, 4);
    return Buffer.concat([tag, pad8(payload)]);
  };

  const flagsPayload = Buffer.alloc(8);
  flagsPayload.writeUInt32LE(6, 0); // mxDOUBLE_CLASS
  const dimsPayload = Buffer.alloc(8);
  dimsPayload.writeInt32LE(rows, 0);
  dimsPayload.writeInt32LE(cols, 4);
  const namePayload = Buffer.from(name, "ascii");
  const dataPayload = Buffer.alloc(8 * values.length);
  values.forEach((v, i) => dataPayload.writeDoubleLE(v, 8 * i));

  const matrixPayload = Buffer.concat([
    element(6, flagsPayload), // miUINT32 array flags
    element(5, dimsPayload), // miINT32 dimensions
    element(1, namePayload), // miINT8 name
    element(9, dataPayload), // miDOUBLE real part
  ]);
  let body = element(14, matrixPayload); // miMATRIX
  if (compress) {
    const deflated = zlib.deflateSync(body);
    const tag = Buffer.alloc(8);
    tag.writeUInt32LE(15, 0); // miCOMPRESSED
    tag.writeUInt32LE(deflated.length, 4);
    body = Buffer.concat([tag, deflated]);
  }
  return Buffer.concat([header, body]);
}

// column-major fixture: emg(r, c) = 10 * c + r  (1-based indices)
const ROWS = 7;
const COLS = 3;
const VALUES: number[] = [];
for (let c = 1; c <= COLS; c++) {
  for (let r = 1; r <= ROWS; r++) VALUES.push(10 * c + r + 0.5);
}

for (const compress of [false, true]) {
  test(`reads a hand-built ${compress ? "compressed" : "plain"} matrix`, () => {
    const vars = readMatBuffer(buildMatFile("emg", ROWS, COLS, VALUES, compress));
    const emg = vars.get("emg");
    assert.ok(emg, "emg variable present");
    assert.deepEqual(emg.dims, [ROWS, COLS]);
    assert.deepEqual([...emg.data], VALUES);
    assert.deepEqual([...matrixColumn(emg, 1)], VALUES.slice(ROWS, 2 * ROWS));
  });
}

test("column access is bounds-checked", () => {
  const vars = readMatBuffer(buildMatFile("emg", ROWS, COLS, VALUES, false));
  assert.throws(() => matrixColumn(vars.get("emg")!, COLS));
  assert.throws(() => matrixColumn(vars.get("emg")!, -1));
});

test("bad endian indicator is rejected", () => {
  const buf = buildMatFile("emg", ROWS, COLS, VALUES, false);
  buf.write("??", 126, "ascii");
  assert.throws(() => readMatBuffer(buf));
});

test("reads scipy-written files (cross-implementation)", { skip: !pythonAvailable() }, () => {
  const dir = tmpDir("mat-");
  const dest = path.join(dir, "S3_E2_A1.mat");
  const script = [
    "import sys",
    "import numpy as np",
    "from scipy.io import savemat",
    "rows, cols = 50, 12",
    "emg = (np.arange(rows * cols, dtype=np.float64).reshape(rows, cols) * 0.25 - 30.0)",
    "extra = np.ones((3, 2))",
    "savemat(sys.argv[1], {'emg': emg, 'stimulus': extra}, do_compression=True)",
    "print(repr(float(emg[17, 4])))",
  ].join("\n");
  const expected1704 = parseFloat(runPython(["-c", script, dest]).trim());

  const vars = readMatBuffer(fs.readFileSync(dest));
  const emg = vars.get("emg");
  assert.ok(emg, "emg variable present");
  assert.deepEqual(emg.dims, [50, 12]);
  // column-major: (17, 4) zero-based sits at 4 * 50 + 17
  assert.equal(emg.data[4 * 50 + 17], expected1704);
  assert.ok(vars.has("stimulus"));
});

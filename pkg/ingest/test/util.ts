import { execFileSync } from "node:child_process";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

/** src/ of the main Python toolkit, two levels above dist/test/. */
export function repoSrcPath(): string {
  return path.resolve(__dirname, "..", "..", "..", "src");
}

export function runPython(args: string[]): string {
  return execFileSync("python3", args, {
    encoding: "utf-8",
    env: { ...process.env, PYTHONPATH: repoSrcPath() },
  });
}

let pythonProbe: boolean | undefined;

export function pythonAvailable(): boolean {
  if (pythonProbe === undefined) {
    try {
      runPython(["-c", "import msemg"]);
      pythonProbe = true;
    } catch {
      pythonProbe = false;
    }
  }
  return pythonProbe;
}

export function tmpDir(prefix: string): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), prefix));
}

import { spawnSync } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

/** The CLI binary; override with SPXMIX_BIN for non-PATH installs. */
export function cliBinary(): string {
  return process.env.SPXMIX_BIN ?? "spxmix";
}

export function runCli(args: string[]): string {
  const result = spawnSync(cliBinary(), args, { encoding: "utf8" });
  if (result.error) {
    throw new Error(`failed to launch ${cliBinary()}: ${result.error.message}`);
  }
  if (result.status !== 0) {
    throw new Error(`${cliBinary()} ${args[0]} exited with ` +
      `${result.status}: ${result.stderr.trim()}`);
  }
  return result.stdout;
}

export function withTempDir<T>(fn: (dir: string) => T): T {
  const dir = mkdtempSync(join(tmpdir(), "spxmix-"));
  try {
    return fn(dir);
  } finally {
    rmSync(dir, { recursive: true, force: true });
  }
}

/**
 * Array-in/array-out client for the spxmix augmentation kernel.
 *
 * Training pipelines hand over plain typed arrays; this module speaks the
 * CLI's published file formats (8-bit PNG images, 16-bit PNG region maps,
 * 0/255 mask PNGs) and never reimplements any numeric work, so outputs
 * are bit-identical to what the CLI itself produces. Each call is one
 * synchronous subprocess; concurrent calls from worker threads are safe
 * because every invocation gets its own temp directory.
 */

import { readFileSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import { decodeGray8, decodeGray16, decodeRgb8, encodeRgb8 } from "./png";
import { runCli, withTempDir } from "./runner";
import {
  ImageU8,
  MaskU8,
  RegionMapU16,
  SuperpixelAlgo,
  validateImage,
} from "./types";

export type { ImageU8, MaskU8, RegionMapU16, SuperpixelAlgo } from "./types";

export interface SuperpixelResult {
  regions: RegionMapU16;
  /** Realized region count (a regular grid cannot hit every requested n). */
  count: number;
}

export function superpixels(
  image: ImageU8,
  algo: SuperpixelAlgo = "watershed",
  n = 200,
): SuperpixelResult {
  validateImage(image);
  if (!Number.isInteger(n) || n < 1) {
    throw new TypeError(`superpixel count must be a positive integer, got ${n}`);
  }
  return withTempDir((dir) => {
    const input = join(dir, "input.png");
    const output = join(dir, "regions.png");
    writeFileSync(input, encodeRgb8(image));
    const stdout = runCli([
      "superpixels", "--input", input, "--algo", algo,
      "--n", String(n), "--output", output,
    ]);
    return {
      regions: decodeGray16(readFileSync(output)),
      count: parseInt(stdout.trim(), 10),
    };
  });
}

export interface MixOptions {
  n?: number;
  proportion?: number;
  seed?: number;
  algo?: SuperpixelAlgo;
}

export interface MixResult {
  mixed: ImageU8;
  mask: MaskU8;
}

export function mix(a: ImageU8, b: ImageU8, options: MixOptions = {}): MixResult {
  validateImage(a, "first image");
  validateImage(b, "second image");
  if (a.height !== b.height || a.width !== b.width) {
    throw new TypeError(`image sizes differ: ${a.height}x${a.width} vs ` +
      `${b.height}x${b.width}`);
  }
  const { n = 200, proportion = 0.5, seed = 0, algo = "watershed" } = options;
  return withTempDir((dir) => {
    const pathA = join(dir, "a.png");
    const pathB = join(dir, "b.png");
    const outMixed = join(dir, "mixed.png");
    const outMask = join(dir, "mask.png");
    writeFileSync(pathA, encodeRgb8(a));
    writeFileSync(pathB, encodeRgb8(b));
    runCli([
      "mix", "--a", pathA, "--b", pathB, "--n", String(n),
      "--proportion", String(proportion), "--algo", algo,
      "--seed", String(seed), "--out", outMixed, "--mask-out", outMask,
    ]);
    return {
      mixed: decodeRgb8(readFileSync(outMixed)),
      mask: decodeGray8(readFileSync(outMask)),
    };
  });
}

import { PNG } from "pngjs";

import type { ImageU8, MaskU8, RegionMapU16 } from "./types";

/** Encode a row-major RGB buffer as PNG (alpha filled with 255). */
export function encodeRgb8(image: ImageU8): Buffer {
  const { height, width, data } = image;
  const png = new PNG({ width, height });
  for (let i = 0, j = 0; i < width * height; i++, j += 3) {
    png.data[i * 4] = data[j];
    png.data[i * 4 + 1] = data[j + 1];
    png.data[i * 4 + 2] = data[j + 2];
    png.data[i * 4 + 3] = 255;
  }
  return PNG.sync.write(png);
}

export function decodeRgb8(buf: Buffer): ImageU8 {
  const png = PNG.sync.read(buf);
  const n = png.width * png.height;
  const data = new Uint8Array(n * 3);
  for (let i = 0; i < n; i++) {
    data[i * 3] = png.data[i * 4];
    data[i * 3 + 1] = png.data[i * 4 + 1];
    data[i * 3 + 2] = png.data[i * 4 + 2];
  }
  return { data, height: png.height, width: png.width };
}

/** Decode a single-channel 8-bit PNG (mix masks are stored as 0/255). */
export function decodeGray8(buf: Buffer): MaskU8 {
  const png = PNG.sync.read(buf);
  const n = png.width * png.height;
  const data = new Uint8Array(n);
  for (let i = 0; i < n; i++) data[i] = png.data[i * 4];
  return { data, height: png.height, width: png.width };
}

/** Decode a single-channel 16-bit PNG without rescaling (region ids). */
export function decodeGray16(buf: Buffer): RegionMapU16 {
  const png = PNG.sync.read(buf, { skipRescale: true } as never);
  if (png.depth !== 16) {
    throw new Error(`expected a 16-bit region map, got depth ${png.depth}`);
  }
  const raw = png.data as unknown as Uint16Array;
  const n = png.width * png.height;
  const data = new Uint16Array(n);
  for (let i = 0; i < n; i++) data[i] = raw[i * 4];
  return { data, height: png.height, width: png.width };
}

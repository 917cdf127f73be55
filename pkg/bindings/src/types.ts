/** Contiguous row-major RGB image, length = height * width * 3. */
export interface ImageU8 {
  data: Uint8Array;
  height: number;
  width: number;
}

/** Per-pixel superpixel region ids, length = height * width. */
export interface RegionMapU16 {
  data: Uint16Array;
  height: number;
  width: number;
}

/** Binary mix mask as stored on disk: 0 keeps the first image, 255 takes
 * the second. Length = height * width. */
export interface MaskU8 {
  data: Uint8Array;
  height: number;
  width: number;
}

export type SuperpixelAlgo = "watershed" | "slic";

function checkDims(height: number, width: number, what: string): void {
  if (!Number.isInteger(height) || !Number.isInteger(width) ||
      height < 1 || width < 1) {
    throw new TypeError(`${what}: height/width must be positive integers, ` +
      `got ${height}x${width}`);
  }
}

/** Boundary validation: exact dtype and exact length, nothing implicit. */
export function validateImage(image: ImageU8, what = "image"): void {
  checkDims(image.height, image.width, what);
  if (!(image.data instanceof Uint8Array)) {
    throw new TypeError(`${what}: data must be a Uint8Array, got ` +
      `${Object.prototype.toString.call(image.data)}`);
  }
  const expected = image.height * image.width * 3;
  if (image.data.length !== expected) {
    throw new TypeError(`${what}: expected ${expected} bytes ` +
      `(${image.height}x${image.width}x3), got ${image.data.length}`);
  }
}

/**
 * Minimal grayscale image support: binary PGM (P5, maxval <= 255) read and
 * write, bilinear resize, and the two training-time augmentations (random
 * resized crop, horizontal flip).
 */

import { readFileSync, writeFileSync } from "node:fs";
import type { Rng } from "./rng.js";

export interface GrayImage {
  width: number;
  height: number;
  /** Row-major pixels in [0, 1]. */
  pixels: Float64Array;
}

export class ImageError extends Error {}

export function readPgm(path: string): GrayImage {
  const blob = readFileSync(path);
  // Header: "P5" <ws> width <ws> height <ws> maxval <single ws> pixels.
  // Comment lines starting with '#' may appear between tokens.
  let off = 0;
  const token = (): string => {
    for (;;) {
      while (off < blob.length && isSpace(blob[off])) off++;
      if (blob[off] === 0x23) {
        while (off < blob.length && blob[off] !== 0x0a) off++;
        continue;
      }
      break;
    }
    const start = off;
    while (off < blob.length && !isSpace(blob[off])) off++;
    if (start === off) throw new ImageError(`${path}: truncated PGM header`);
    return blob.subarray(start, off).toString("latin1");
  };
  if (token() !== "P5") throw new ImageError(`${path}: not a binary PGM`);
  const width = Number(token());
  const height = Number(token());
  const maxval = Number(token());
  if (!Number.isInteger(width) || !Number.isInteger(height) || width <= 0 || height <= 0) {
    throw new ImageError(`${path}: bad PGM dimensions`);
  }
  if (!Number.isInteger(maxval) || maxval <= 0 || maxval > 255) {
    throw new ImageError(`${path}: unsupported PGM maxval ${maxval}`);
  }
  off++; // single whitespace byte after maxval
  if (off + width * height > blob.length) {
    throw new ImageError(`${path}: truncated PGM pixel data`);
  }
  const pixels = new Float64Array(width * height);
  for (let i = 0; i < pixels.length; i++) pixels[i] = blob[off + i] / maxval;
  return { width, height, pixels };
}

export function writePgm(img: GrayImage, path: string): void {
  const header = Buffer.from(`P5\n${img.width} ${img.height}\n255\n`, "latin1");
  const body = Buffer.alloc(img.width * img.height);
  for (let i = 0; i < body.length; i++) {
    body[i] = Math.max(0, Math.min(255, Math.round(img.pixels[i] * 255)));
  }
  writeFileSync(path, Buffer.concat([header, body]));
}

function isSpace(byte: number): boolean {
  return byte === 0x20 || byte === 0x09 || byte === 0x0a || byte === 0x0d;
}

/** Bilinear resample of a rectangular window onto a target grid. */
export function resizeRegion(
  img: GrayImage,
  x0: number,
  y0: number,
  cropW: number,
  cropH: number,
  outW: number,
  outH: number,
): GrayImage {
  const out = new Float64Array(outW * outH);
  for (let oy = 0; oy < outH; oy++) {
    const sy = y0 + ((oy + 0.5) / outH) * cropH - 0.5;
    const y = Math.max(0, Math.min(img.height - 1, sy));
    const yi = Math.min(img.height - 2, Math.max(0, Math.floor(y)));
    const fy = Math.min(1, Math.max(0, y - yi));
    for (let ox = 0; ox < outW; ox++) {
      const sx = x0 + ((ox + 0.5) / outW) * cropW - 0.5;
      const x = Math.max(0, Math.min(img.width - 1, sx));
      const xi = Math.min(img.width - 2, Math.max(0, Math.floor(x)));
      const fx = Math.min(1, Math.max(0, x - xi));
      const a = img.pixels[yi * img.width + xi];
      const b = img.pixels[yi * img.width + xi + 1];
      const c = img.pixels[(yi + 1) * img.width + xi];
      const d = img.pixels[(yi + 1) * img.width + xi + 1];
      out[oy * outW + ox] =
        a * (1 - fx) * (1 - fy) + b * fx * (1 - fy) + c * (1 - fx) * fy + d * fx * fy;
    }
  }
  return { width: outW, height: outH, pixels: out };
}

/** Plain resize of the whole frame (used for the unaugmented view). */
export function resize(img: GrayImage, outW: number, outH: number): GrayImage {
  return resizeRegion(img, 0, 0, img.width, img.height, outW, outH);
}

export function hflip(img: GrayImage): GrayImage {
  const out = new Float64Array(img.pixels.length);
  for (let y = 0; y < img.height; y++) {
    for (let x = 0; x < img.width; x++) {
      out[y * img.width + x] = img.pixels[y * img.width + (img.width - 1 - x)];
    }
  }
  return { width: img.width, height: img.height, pixels: out };
}

/**
 * Random resized crop: sample an area fraction in [0.5, 1.0] and an aspect
 * ratio in [3/4, 4/3], place the crop uniformly, and resample to the target
 * size. Followed by a coin-flip horizontal flip.
 */
export function augmentedView(img: GrayImage, rng: Rng, outW: number, outH: number): GrayImage {
  let cropW = img.width;
  let cropH = img.height;
  let x0 = 0;
  let y0 = 0;
  for (let attempt = 0; attempt < 10; attempt++) {
    const area = img.width * img.height * (0.5 + 0.5 * rng.next());
    const logRatio = Math.log(3 / 4) + (Math.log(4 / 3) - Math.log(3 / 4)) * rng.next();
    const ratio = Math.exp(logRatio);
    const w = Math.round(Math.sqrt(area * ratio));
    const h = Math.round(Math.sqrt(area / ratio));
    if (w >= 1 && h >= 1 && w <= img.width && h <= img.height) {
      cropW = w;
      cropH = h;
      x0 = rng.int(img.width - w + 1);
      y0 = rng.int(img.height - h + 1);
      break;
    }
  }
  let out = resizeRegion(img, x0, y0, cropW, cropH, outW, outH);
  if (rng.next() < 0.5) out = hflip(out);
  return out;
}

import { mkdirSync, mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { writePgm, type GrayImage } from "../src/images.js";
import { Rng } from "../src/rng.js";

export function tmpDir(): string {
  return mkdtempSync(join(tmpdir(), "featex-test-"));
}

/**
 * A class-conditioned synthetic image: each class gets a distinct smooth
 * base pattern; each image adds a small amount of per-image noise. The
 * patterns separate well under the toy encoder, so zero-shot accuracy on
 * these is non-degenerate.
 */
export function makeImage(cls: number, idx: number, size = 24): GrayImage {
  const rng = new Rng(cls * 1000 + idx);
  const pixels = new Float64Array(size * size);
  for (let y = 0; y < size; y++) {
    for (let x = 0; x < size; x++) {
      const base =
        0.5 +
        0.3 * Math.sin(((cls + 1) * 2 * Math.PI * x) / size) *
          Math.cos(((cls + 2) * 2 * Math.PI * y) / size);
      const noisy = base + 0.08 * rng.gauss();
      pixels[y * size + x] = Math.min(1, Math.max(0, noisy));
    }
  }
  return { width: size, height: size, pixels };
}

/** Writes root/split/class-c/img-i.pgm for k classes x n images. */
export function makeDataset(root: string, split: string, k: number, n: number): string[] {
  const names: string[] = [];
  for (let c = 0; c < k; c++) {
    const name = `class-${String(c).padStart(2, "0")}`;
    names.push(name);
    const dir = join(root, split, name);
    mkdirSync(dir, { recursive: true });
    for (let i = 0; i < n; i++) {
      writePgm(makeImage(c, i), join(dir, `img-${String(i).padStart(3, "0")}.pgm`));
    }
  }
  return names;
}

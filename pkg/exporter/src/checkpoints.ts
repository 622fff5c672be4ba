/**
 * Toy vision-language checkpoints. Each checkpoint deterministically derives
 * its weights from its id, so the exporter is self-contained (no downloads)
 * while exercising the real backbone shapes.
 *
 * The visual encoder maps a grayscale image to a D_o-dimensional
 * pre-projection feature: downsample to a 16x16 patch grid, then apply a
 * seeded linear map with a tanh nonlinearity. The text encoder hashes the
 * filled template into a seeded embedding. Both are fixed functions of the
 * checkpoint id, which is all the parity invariant needs.
 */

import { hashString, Rng } from "./rng.js";
import type { GrayImage } from "./images.js";
import { resize } from "./images.js";

export const PATCH_GRID = 16; // encoder input is PATCH_GRID x PATCH_GRID

export interface Checkpoint {
  id: string;
  dPre: number; // pre-projection (visual backbone output) dim
  dEmbed: number; // joint embedding dim
  hasBias: boolean;
  logitScale: number; // temp = exp(logitScale)
}

const REGISTRY: Record<string, Omit<Checkpoint, "id">> = {
  // Mirrors the ResNet-50 head: 2048x1024 projection with a bias.
  "toy-rn50": { dPre: 2048, dEmbed: 1024, hasBias: true, logitScale: Math.log(100) },
  // Mirrors the ViT-B/16 head: 768x512 projection, no bias.
  "toy-vit-b16": { dPre: 768, dEmbed: 512, hasBias: false, logitScale: Math.log(100) },
  // Small head for fast tests.
  "toy-tiny": { dPre: 32, dEmbed: 16, hasBias: true, logitScale: Math.log(100) },
};

export function listCheckpoints(): string[] {
  return Object.keys(REGISTRY);
}

export class CheckpointError extends Error {}

export function loadCheckpoint(id: string): Checkpoint {
  const entry = REGISTRY[id];
  if (!entry) {
    throw new CheckpointError(
      `unknown checkpoint ${JSON.stringify(id)}; available: ${listCheckpoints().join(", ")}`,
    );
  }
  return { id, ...entry };
}

function seededMatrix(ckpt: Checkpoint, tag: string, rows: number, cols: number): Float64Array {
  const rng = new Rng(hashString(ckpt.id), hashString(tag), rows, cols);
  const out = new Float64Array(rows * cols);
  const scale = 1 / Math.sqrt(cols);
  for (let i = 0; i < out.length; i++) out[i] = scale * rng.gauss();
  return out;
}

/** Pre-projection visual feature for one image view. */
export function encodeImage(ckpt: Checkpoint, img: GrayImage): Float64Array {
  const patch =
    img.width === PATCH_GRID && img.height === PATCH_GRID
      ? img
      : resize(img, PATCH_GRID, PATCH_GRID);
  const inDim = PATCH_GRID * PATCH_GRID;
  const w = seededMatrix(ckpt, "visual", ckpt.dPre, inDim);
  const out = new Float64Array(ckpt.dPre);
  for (let r = 0; r < ckpt.dPre; r++) {
    let acc = 0;
    const base = r * inDim;
    for (let c = 0; c < inDim; c++) acc += w[base + c] * (patch.pixels[c] - 0.5);
    out[r] = Math.tanh(acc);
  }
  return out;
}

/** Pre-projection text feature for one filled template string. */
export function encodeText(ckpt: Checkpoint, text: string): Float64Array {
  const rng = new Rng(hashString(ckpt.id), hashString("text"), hashString(text));
  const out = new Float64Array(ckpt.dPre);
  for (let i = 0; i < out.length; i++) out[i] = rng.gauss();
  return out;
}

/** The shipped projection head (W, optional bias) as f64 row-major (dPre x dEmbed). */
export function projectionWeights(ckpt: Checkpoint): {
  w: Float64Array;
  bias: Float64Array | null;
} {
  const w = seededMatrix(ckpt, "proj", ckpt.dPre, ckpt.dEmbed);
  let bias: Float64Array | null = null;
  if (ckpt.hasBias) {
    const rng = new Rng(hashString(ckpt.id), hashString("proj-bias"), ckpt.dEmbed);
    bias = new Float64Array(ckpt.dEmbed);
    for (let i = 0; i < bias.length; i++) bias[i] = 0.01 * rng.gauss();
  }
  return { w, bias };
}

/** Apply the head: normalize(W^T x + b). Returns a unit-norm dEmbed vector. */
export function project(
  ckpt: Checkpoint,
  w: Float64Array,
  bias: Float64Array | null,
  x: Float64Array,
): Float64Array {
  const out = new Float64Array(ckpt.dEmbed);
  for (let c = 0; c < ckpt.dEmbed; c++) out[c] = bias ? bias[c] : 0;
  for (let r = 0; r < ckpt.dPre; r++) {
    const xv = x[r];
    if (xv === 0) continue;
    const base = r * ckpt.dEmbed;
    for (let c = 0; c < ckpt.dEmbed; c++) out[c] += w[base + c] * xv;
  }
  let ss = 0;
  for (let c = 0; c < ckpt.dEmbed; c++) ss += out[c] * out[c];
  const norm = Math.sqrt(ss) || 1;
  for (let c = 0; c < ckpt.dEmbed; c++) out[c] /= norm;
  return out;
}

/**
 * Feature export: walks a directory-per-class image dataset, runs a toy
 * vision-language checkpoint, and writes the FBANK / TCLS / PROJ artifacts
 * that the training toolkit consumes.
 *
 * Dataset layout: <root>/<split>/<class name>/*.pgm. Class names are the
 * directory names, sorted; labels are their sorted indices.
 */

import { readdirSync, statSync } from "node:fs";
import { join } from "node:path";
import {
  Checkpoint,
  encodeImage,
  encodeText,
  loadCheckpoint,
  project,
  projectionWeights,
} from "./checkpoints.js";
import { augmentedView, readPgm, resize } from "./images.js";
import { PATCH_GRID } from "./checkpoints.js";
import {
  writeFbank,
  writeProj,
  writeTcls,
  type FeatureBank,
  type ProjectionHead,
  type TextClassifier,
} from "./formats.js";
import { hashString, Rng } from "./rng.js";

export interface ExportSpec {
  checkpoint: string;
  datasetRoot: string;
  split: string;
  /** One or more templates, each containing a "{}" class-name placeholder. */
  templates: string[];
  views: number;
  seed: number;
}

export class ExportError extends Error {}

/** Named prompt-template ensembles selectable by name instead of literal strings. */
export const TEMPLATE_SETS: Record<string, string[]> = {
  imagenet: [
    "itap of a {}.",
    "a bad photo of the {}.",
    "a origami {}.",
    "a photo of the large {}.",
    "a {} in a video game.",
    "art of the {}.",
    "a photo of the small {}.",
  ],
};

export function resolveTemplates(nameOrLiterals: string[]): string[] {
  if (nameOrLiterals.length === 1 && nameOrLiterals[0] in TEMPLATE_SETS) {
    return TEMPLATE_SETS[nameOrLiterals[0]];
  }
  return nameOrLiterals;
}

export function validateSpec(spec: ExportSpec): void {
  if (spec.views < 1) throw new ExportError("views must be >= 1");
  if (spec.templates.length === 0) throw new ExportError("at least one template required");
  for (const t of spec.templates) {
    if (!t.includes("{}")) {
      throw new ExportError(`template ${JSON.stringify(t)} has no {} class-name placeholder`);
    }
  }
}

export interface DatasetIndex {
  classNames: string[];
  /** Per image: path and label (index into classNames). */
  images: { path: string; rel: string; label: number }[];
}

export function scanDataset(root: string, split: string): DatasetIndex {
  const splitDir = join(root, split);
  let entries: string[];
  try {
    entries = readdirSync(splitDir);
  } catch {
    throw new ExportError(`dataset split directory not readable: ${splitDir}`);
  }
  const classNames = entries
    .filter((e) => statSync(join(splitDir, e)).isDirectory())
    .sort();
  if (classNames.length < 2) {
    throw new ExportError(`need at least 2 class directories under ${splitDir}`);
  }
  const images: DatasetIndex["images"] = [];
  classNames.forEach((name, label) => {
    const files = readdirSync(join(splitDir, name))
      .filter((f) => f.toLowerCase().endsWith(".pgm"))
      .sort();
    if (files.length === 0) throw new ExportError(`class ${name} has no .pgm images`);
    for (const f of files) {
      images.push({ path: join(splitDir, name, f), rel: `${name}/${f}`, label });
    }
  });
  return { classNames, images };
}

function fround(values: Float64Array): Float32Array {
  return Float32Array.from(values);
}

/** Per-view visual features for one image, view 0 unaugmented. */
export function imageViews(
  ckpt: Checkpoint,
  spec: ExportSpec,
  rel: string,
  path: string,
): Float64Array[] {
  const img = readPgm(path);
  const out: Float64Array[] = [encodeImage(ckpt, resize(img, PATCH_GRID, PATCH_GRID))];
  for (let v = 1; v < spec.views; v++) {
    const rng = new Rng(spec.seed, hashString(rel), v);
    out.push(encodeImage(ckpt, augmentedView(img, rng, PATCH_GRID, PATCH_GRID)));
  }
  return out;
}

export function exportVisual(spec: ExportSpec, outPath: string): DatasetIndex {
  validateSpec(spec);
  const ckpt = loadCheckpoint(spec.checkpoint);
  const index = scanDataset(spec.datasetRoot, spec.split);
  const n = index.images.length;
  const x = new Float32Array(n * spec.views * ckpt.dPre);
  const labels = new Uint32Array(n);
  index.images.forEach((im, i) => {
    labels[i] = im.label;
    const views = imageViews(ckpt, spec, im.rel, im.path);
    views.forEach((feat, v) => {
      x.set(fround(feat), (i * spec.views + v) * ckpt.dPre);
    });
  });
  const bank: FeatureBank = { x, n, views: spec.views, dim: ckpt.dPre, labels };
  writeFbank(bank, outPath);
  return index;
}

/** Unit-norm embedding-space classifier row for one class. */
export function classEmbedding(ckpt: Checkpoint, templates: string[], name: string): Float64Array {
  const { w, bias } = projectionWeights(ckpt);
  const acc = new Float64Array(ckpt.dEmbed);
  for (const template of templates) {
    const emb = project(ckpt, w, bias, encodeText(ckpt, template.replace("{}", name)));
    for (let j = 0; j < acc.length; j++) acc[j] += emb[j]; // emb is unit norm
  }
  let ss = 0;
  for (const v of acc) ss += v * v;
  const norm = Math.sqrt(ss) || 1;
  for (let j = 0; j < acc.length; j++) acc[j] /= norm;
  return acc;
}

export function exportText(
  spec: ExportSpec,
  classNames: string[],
  outPath: string,
  preOutPath?: string,
): void {
  validateSpec(spec);
  if (classNames.length === 0) throw new ExportError("class names must be non-empty");
  if (new Set(classNames).size !== classNames.length) {
    throw new ExportError("duplicate class names");
  }
  const ckpt = loadCheckpoint(spec.checkpoint);
  const k = classNames.length;
  const t = new Float32Array(k * ckpt.dEmbed);
  classNames.forEach((name, row) => {
    const emb = classEmbedding(ckpt, spec.templates, name);
    // Renormalize after f32 quantization so the written rows satisfy the
    // unit-norm invariant exactly at f32 precision.
    const q = fround(emb);
    let ss = 0;
    for (const v of q) ss += v * v;
    const norm = Math.sqrt(ss) || 1;
    for (let j = 0; j < q.length; j++) q[j] = Math.fround(q[j] / norm);
    t.set(q, row * ckpt.dEmbed);
  });
  const cls: TextClassifier = { t, k, dim: ckpt.dEmbed, classNames };
  writeTcls(cls, outPath);

  if (preOutPath) {
    // Pre-projection text features: one sample per (class, template) pair,
    // labeled by class, for text-side projection tuning.
    const nPre = k * spec.templates.length;
    const xPre = new Float32Array(nPre * ckpt.dPre);
    const labels = new Uint32Array(nPre);
    let i = 0;
    for (let row = 0; row < k; row++) {
      for (const template of spec.templates) {
        labels[i] = row;
        xPre.set(fround(encodeText(ckpt, template.replace("{}", classNames[row]))), i * ckpt.dPre);
        i++;
      }
    }
    writeFbank({ x: xPre, n: nPre, views: 1, dim: ckpt.dPre, labels }, preOutPath);
  }
}

export function exportProj(spec: ExportSpec, outPath: string): void {
  const ckpt = loadCheckpoint(spec.checkpoint);
  const { w, bias } = projectionWeights(ckpt);
  const w32 = fround(w);
  const head: ProjectionHead = {
    w: w32,
    w0: Float32Array.from(w32),
    bias: bias ? fround(bias) : null,
    dPre: ckpt.dPre,
    dEmbed: ckpt.dEmbed,
    temp: Math.exp(ckpt.logitScale),
    methodTag: 0,
  };
  writeProj(head, outPath);
}

/**
 * Reference zero-shot accuracy computed end-to-end inside the exporter on
 * view-0 features, with every tensor quantized to f32 the same way the
 * written files are. The toolkit's accuracy on the exported files must match
 * this to within 0.05 percentage points.
 */
export function referenceZeroShotAccuracy(spec: ExportSpec): number {
  validateSpec(spec);
  const ckpt = loadCheckpoint(spec.checkpoint);
  const index = scanDataset(spec.datasetRoot, spec.split);
  const { w, bias } = projectionWeights(ckpt);
  const w64 = Float64Array.from(fround(w));
  const b64 = bias ? Float64Array.from(fround(bias)) : null;
  const rows = index.classNames.map((name) => {
    const emb = classEmbedding(ckpt, spec.templates, name);
    const q = fround(emb);
    let ss = 0;
    for (const v of q) ss += v * v;
    const norm = Math.sqrt(ss) || 1;
    return Float64Array.from(q, (v) => Math.fround(v / norm));
  });
  let correct = 0;
  for (const im of index.images) {
    const feat = Float64Array.from(fround(imageViews(ckpt, spec, im.rel, im.path)[0]));
    const emb = project(ckpt, w64, b64, feat);
    let best = 0;
    let bestScore = -Infinity;
    rows.forEach((row, kRow) => {
      let score = 0;
      for (let j = 0; j < emb.length; j++) score += emb[j] * row[j];
      if (score > bestScore) {
        bestScore = score;
        best = kRow;
      }
    });
    if (best === im.label) correct++;
  }
  return correct / index.images.length;
}

/**
 * Binary writers (and readers, used by the tests) for the FBANK / TCLS /
 * PROJ containers. All fields are little-endian; floats are 32-bit on disk.
 * Writers stage to a temp file and rename into place.
 */

import { mkdtempSync, renameSync, rmSync, writeFileSync } from "node:fs";
import { readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { dirname, join } from "node:path";

export const FBANK_MAGIC = "PLIPFB1\0";
export const TCLS_MAGIC = "PLIPTC1\0";
export const PROJ_MAGIC = "PLIPPJ1\0";

export interface FeatureBank {
  /** Flattened (n, views, dim) row-major feature tensor. */
  x: Float32Array;
  n: number;
  views: number;
  dim: number;
  labels: Uint32Array | null;
}

export interface TextClassifier {
  /** Flattened (k, dim) row-major, unit-norm rows. */
  t: Float32Array;
  k: number;
  dim: number;
  classNames: string[];
}

export interface ProjectionHead {
  /** Flattened (dPre, dEmbed) row-major. */
  w: Float32Array;
  w0: Float32Array;
  bias: Float32Array | null;
  dPre: number;
  dEmbed: number;
  temp: number;
  methodTag: number;
}

export class FormatError extends Error {}

function atomicWrite(path: string, blob: Buffer): void {
  const dir = mkdtempSync(join(dirname(path), ".featex-"));
  const tmp = join(dir, "out.bin");
  try {
    writeFileSync(tmp, blob);
    renameSync(tmp, path);
  } finally {
    rmSync(dir, { recursive: true, force: true });
  }
}

function u32(value: number): Buffer {
  const b = Buffer.alloc(4);
  b.writeUInt32LE(value >>> 0);
  return b;
}

function f32Block(values: Float32Array): Buffer {
  const b = Buffer.alloc(4 * values.length);
  for (let i = 0; i < values.length; i++) b.writeFloatLE(values[i], 4 * i);
  return b;
}

export function writeFbank(bank: FeatureBank, path: string): void {
  if (bank.x.length !== bank.n * bank.views * bank.dim) {
    throw new FormatError("feature tensor size does not match header dims");
  }
  const parts: Buffer[] = [
    Buffer.from(FBANK_MAGIC, "latin1"),
    u32(bank.dim),
    u32(bank.n),
    u32(bank.views),
    u32(bank.labels ? 1 : 0),
  ];
  if (bank.labels) {
    const lb = Buffer.alloc(4 * bank.n);
    for (let i = 0; i < bank.n; i++) lb.writeUInt32LE(bank.labels[i], 4 * i);
    parts.push(lb);
  }
  parts.push(f32Block(bank.x));
  atomicWrite(path, Buffer.concat(parts));
}

export function writeTcls(cls: TextClassifier, path: string): void {
  if (cls.classNames.length !== cls.k) {
    throw new FormatError("one class name per row required");
  }
  if (new Set(cls.classNames).size !== cls.k) {
    throw new FormatError("duplicate class names");
  }
  for (let row = 0; row < cls.k; row++) {
    let ss = 0;
    for (let j = 0; j < cls.dim; j++) {
      const v = cls.t[row * cls.dim + j];
      ss += v * v;
    }
    if (Math.abs(Math.sqrt(ss) - 1.0) > 1e-4) {
      throw new FormatError(`classifier row ${row} is not unit norm`);
    }
  }
  const parts: Buffer[] = [
    Buffer.from(TCLS_MAGIC, "latin1"),
    u32(cls.dim),
    u32(cls.k),
  ];
  for (const name of cls.classNames) {
    const raw = Buffer.from(name, "utf-8");
    parts.push(u32(raw.length), raw);
  }
  parts.push(f32Block(cls.t));
  atomicWrite(path, Buffer.concat(parts));
}

export function writeProj(head: ProjectionHead, path: string): void {
  const size = head.dPre * head.dEmbed;
  if (head.w.length !== size || head.w0.length !== size) {
    throw new FormatError("projection matrix size does not match header dims");
  }
  if (head.bias && head.bias.length !== head.dEmbed) {
    throw new FormatError("bias length must equal the embedding dim");
  }
  const tempBuf = Buffer.alloc(4);
  tempBuf.writeFloatLE(head.temp);
  const parts: Buffer[] = [
    Buffer.from(PROJ_MAGIC, "latin1"),
    u32(head.dPre),
    u32(head.dEmbed),
    u32(head.bias ? 1 : 0),
    u32(head.methodTag),
    tempBuf,
    f32Block(head.w),
  ];
  if (head.bias) parts.push(f32Block(head.bias));
  parts.push(f32Block(head.w0));
  atomicWrite(path, Buffer.concat(parts));
}

class Reader {
  private off = 0;
  constructor(private blob: Buffer, private path: string) {}

  take(n: number): Buffer {
    if (this.off + n > this.blob.length) {
      throw new FormatError(`${this.path}: truncated file`);
    }
    const out = this.blob.subarray(this.off, this.off + n);
    this.off += n;
    return out;
  }

  u32(): number {
    return this.take(4).readUInt32LE();
  }

  f32(): number {
    return this.take(4).readFloatLE();
  }

  f32Array(count: number): Float32Array {
    const raw = this.take(4 * count);
    const out = new Float32Array(count);
    for (let i = 0; i < count; i++) out[i] = raw.readFloatLE(4 * i);
    return out;
  }

  magic(expected: string): void {
    const got = this.take(expected.length).toString("latin1");
    if (got !== expected) {
      throw new FormatError(`${this.path}: bad magic ${JSON.stringify(got)}`);
    }
  }

  done(): void {
    if (this.off !== this.blob.length) {
      throw new FormatError(`${this.path}: trailing bytes`);
    }
  }
}

export function readFbank(path: string): FeatureBank {
  const r = new Reader(readFileSync(path), path);
  r.magic(FBANK_MAGIC);
  const dim = r.u32();
  const n = r.u32();
  const views = r.u32();
  const hasLabels = r.u32();
  if (dim === 0 || n === 0 || views === 0 || hasLabels > 1) {
    throw new FormatError(`${path}: invalid FBANK header`);
  }
  let labels: Uint32Array | null = null;
  if (hasLabels) {
    labels = new Uint32Array(n);
    const raw = r.take(4 * n);
    for (let i = 0; i < n; i++) labels[i] = raw.readUInt32LE(4 * i);
  }
  const x = r.f32Array(n * views * dim);
  r.done();
  return { x, n, views, dim, labels };
}

export function readTcls(path: string): TextClassifier {
  const r = new Reader(readFileSync(path), path);
  r.magic(TCLS_MAGIC);
  const dim = r.u32();
  const k = r.u32();
  if (dim === 0 || k < 2) throw new FormatError(`${path}: invalid TCLS header`);
  const classNames: string[] = [];
  for (let i = 0; i < k; i++) {
    const len = r.u32();
    classNames.push(r.take(len).toString("utf-8"));
  }
  const t = r.f32Array(k * dim);
  r.done();
  return { t, k, dim, classNames };
}

export function readProj(path: string): ProjectionHead {
  const r = new Reader(readFileSync(path), path);
  r.magic(PROJ_MAGIC);
  const dPre = r.u32();
  const dEmbed = r.u32();
  const hasBias = r.u32();
  const methodTag = r.u32();
  if (dPre === 0 || dEmbed === 0 || hasBias > 1) {
    throw new FormatError(`${path}: invalid PROJ header`);
  }
  const temp = r.f32();
  const w = r.f32Array(dPre * dEmbed);
  const bias = hasBias ? r.f32Array(dEmbed) : null;
  const w0 = r.f32Array(dPre * dEmbed);
  r.done();
  return { w, w0, bias, dPre, dEmbed, temp, methodTag };
}

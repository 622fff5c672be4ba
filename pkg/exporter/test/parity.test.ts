/**
 * Cross-toolkit parity: the training toolkit's zero-shot accuracy on
 * exported files must match the exporter's own end-to-end reference to
 * within 0.05 percentage points (the agreed f32 round-trip slack).
 */

import { spawnSync } from "node:child_process";
import { mkdirSync, readFileSync } from "node:fs";
import { join } from "node:path";
import { describe, expect, it } from "vitest";
import {
  exportProj,
  exportText,
  exportVisual,
  referenceZeroShotAccuracy,
  scanDataset,
  type ExportSpec,
} from "../src/exporter.js";
import { makeDataset, tmpDir } from "./helpers.js";

function runProjtune(args: string[]): { status: number; stdout: string; stderr: string } {
  const res = spawnSync("projtune", args, { encoding: "utf-8" });
  if (res.error) throw res.error;
  return { status: res.status ?? -1, stdout: res.stdout, stderr: res.stderr };
}

describe("zero-shot parity with the training toolkit", () => {
  it("toolkit accuracy on exported files matches the in-process reference", () => {
    const root = tmpDir();
    makeDataset(root, "test", 5, 8);
    const spec: ExportSpec = {
      checkpoint: "toy-tiny",
      datasetRoot: root,
      split: "test",
      templates: ["a photo of a {}."],
      views: 1,
      seed: 0,
    };
    const bank = join(root, "bank.fbank");
    const tcls = join(root, "cls.tcls");
    const proj = join(root, "head.proj");
    const index = exportVisual(spec, bank);
    exportText(spec, index.classNames, tcls);
    exportProj(spec, proj);

    const reference = referenceZeroShotAccuracy(spec);
    expect(reference).toBeGreaterThanOrEqual(0);
    expect(reference).toBeLessThanOrEqual(1);

    const outDir = join(root, "eval");
    mkdirSync(outDir);
    const res = runProjtune([
      "eval",
      "--bank", bank,
      "--tcls", tcls,
      "--proj", proj,
      "--out", outDir,
    ]);
    expect(res.status, res.stderr).toBe(0);
    const report = JSON.parse(readFileSync(join(outDir, "report.json"), "utf-8"));
    expect(report.n_test).toBe(index.images.length);
    expect(Math.abs(report.accuracy - reference)).toBeLessThanOrEqual(0.0005);
  }, 60_000);

  it("holds for a multi-template ensemble and a biased full-size head", () => {
    const root = tmpDir();
    makeDataset(root, "test", 3, 5);
    const spec: ExportSpec = {
      checkpoint: "toy-tiny",
      datasetRoot: root,
      split: "test",
      templates: ["a photo of a {}.", "a drawing of a {}.", "itap of a {}."],
      views: 2,
      seed: 3,
    };
    const bank = join(root, "bank.fbank");
    const tcls = join(root, "cls.tcls");
    const proj = join(root, "head.proj");
    exportVisual(spec, bank);
    exportText(spec, scanDataset(root, "test").classNames, tcls);
    exportProj(spec, proj);

    const reference = referenceZeroShotAccuracy(spec);
    const outDir = join(root, "eval");
    mkdirSync(outDir);
    const res = runProjtune([
      "eval",
      "--bank", bank,
      "--tcls", tcls,
      "--proj", proj,
      "--out", outDir,
    ]);
    expect(res.status, res.stderr).toBe(0);
    const report = JSON.parse(readFileSync(join(outDir, "report.json"), "utf-8"));
    expect(Math.abs(report.accuracy - reference)).toBeLessThanOrEqual(0.0005);
  }, 60_000);
});

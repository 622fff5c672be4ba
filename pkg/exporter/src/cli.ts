#!/usr/bin/env node
/**
 * featex: export pre-projection features, text classifiers, and projection
 * heads from toy vision-language checkpoints into FBANK/TCLS/PROJ files.
 */

import yargs from "yargs";
import { hideBin } from "yargs/helpers";
import { listCheckpoints } from "./checkpoints.js";
import {
  ExportError,
  exportProj,
  exportText,
  exportVisual,
  referenceZeroShotAccuracy,
  resolveTemplates,
  scanDataset,
  type ExportSpec,
} from "./exporter.js";
import { FormatError } from "./formats.js";
import { ImageError } from "./images.js";
import { CheckpointError } from "./checkpoints.js";

interface SpecArgs {
  checkpoint: string;
  root: string;
  split: string;
  template: string[];
  views: number;
  seed: number;
}

function toSpec(argv: SpecArgs): ExportSpec {
  return {
    checkpoint: argv.checkpoint,
    datasetRoot: argv.root,
    split: argv.split,
    templates: resolveTemplates(argv.template),
    views: argv.views,
    seed: argv.seed,
  };
}

const specOptions = {
  checkpoint: { type: "string", default: "toy-tiny", describe: "checkpoint id" },
  root: { type: "string", demandOption: true, describe: "dataset root directory" },
  split: { type: "string", default: "test", describe: "dataset split subdirectory" },
  template: {
    type: "string",
    array: true,
    default: ["a photo of a {}."],
    describe:
      "prompt template(s); {} is replaced with the class name; a single " +
      "named set (e.g. 'imagenet') is also accepted",
  },
  views: { type: "number", default: 1, describe: "augmentation views (view 0 un-augmented)" },
  seed: { type: "number", default: 0, describe: "augmentation seed" },
} as const;

export async function main(argv: string[]): Promise<number> {
  try {
    await yargs(argv)
      .scriptName("featex")
      .command(
        "checkpoints",
        "list available checkpoint ids",
        () => {},
        () => {
          for (const id of listCheckpoints()) console.log(id);
        },
      )
      .command(
        "visual",
        "export a visual feature bank (FBANK)",
        (y) => y.options(specOptions).option("out", { type: "string", demandOption: true }),
        (a) => {
          const index = exportVisual(toSpec(a as unknown as SpecArgs), a.out as string);
          console.log(`wrote ${a.out}: ${index.images.length} images, ${index.classNames.length} classes`);
        },
      )
      .command(
        "text",
        "export a text classifier (TCLS)",
        (y) =>
          y
            .options(specOptions)
            .option("out", { type: "string", demandOption: true })
            .option("pre-out", {
              type: "string",
              describe: "also write pre-projection text features (FBANK)",
            }),
        (a) => {
          const spec = toSpec(a as unknown as SpecArgs);
          const names = scanDataset(spec.datasetRoot, spec.split).classNames;
          exportText(spec, names, a.out as string, a.preOut as string | undefined);
          console.log(`wrote ${a.out}: ${names.length} classes`);
        },
      )
      .command(
        "proj",
        "export the pretrained projection head (PROJ)",
        (y) => y.options(specOptions).option("out", { type: "string", demandOption: true }),
        (a) => {
          exportProj(toSpec(a as unknown as SpecArgs), a.out as string);
          console.log(`wrote ${a.out}`);
        },
      )
      .command(
        "zeroshot",
        "print the reference zero-shot accuracy computed in-process",
        (y) => y.options(specOptions),
        (a) => {
          const acc = referenceZeroShotAccuracy(toSpec(a as unknown as SpecArgs));
          console.log(`accuracy=${acc.toFixed(6)}`);
        },
      )
      .demandCommand(1)
      .strict()
      .fail((msg, err) => {
        throw err ?? new ExportError(msg);
      })
      .parseAsync();
    return 0;
  } catch (err) {
    if (
      err instanceof ExportError ||
      err instanceof FormatError ||
      err instanceof ImageError ||
      err instanceof CheckpointError
    ) {
      console.error(`featex: ${err.message}`);
      return 2;
    }
    throw err;
  }
}

main(hideBin(process.argv)).then((code) => {
  process.exitCode = code;
});

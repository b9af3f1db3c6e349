/**
 * Trainer CLI: train-coarse, train-refine, predict.
 *
 * Consumes datasets written by `refmatte generate` (manifest + PNG + .flo)
 * and writes predictions in the same formats, so `refmatte evaluate` can
 * score them directly.
 */

import * as path from "node:path";

import { buildCoarseNet } from "./coarsenet.js";
import { loadDataset } from "./data.js";
import { buildRefineNet } from "./refinenet.js";
import {
  loadCheckpoint,
  predict,
  saveCheckpoint,
  trainCoarse,
  trainRefine,
  writePrediction,
} from "./train.js";

interface Flags {
  [key: string]: string;
}

function parseFlags(argv: string[]): Flags {
  const flags: Flags = {};
  for (let i = 0; i < argv.length; i += 2) {
    if (!argv[i].startsWith("--") || i + 1 >= argv.length) {
      throw new Error(`malformed flag list near ${argv[i]}`);
    }
    flags[argv[i].slice(2)] = argv[i + 1];
  }
  return flags;
}

function need(flags: Flags, key: string): string {
  const v = flags[key];
  if (v === undefined) throw new Error(`missing required flag --${key}`);
  return v;
}

function main(argv: string[]): number {
  const [command, ...rest] = argv;
  if (!command) {
    console.error(
      "usage: cli.js <train-coarse|train-refine|predict> --data DIR ..."
    );
    return 2;
  }
  const flags = parseFlags(rest);
  const mult = parseFloat(flags.multiplier ?? "0.25");
  const seed = parseInt(flags.seed ?? "0", 10);
  const lr = parseFloat(flags.lr ?? "1e-3");

  if (command === "train-coarse") {
    const samples = loadDataset(need(flags, "data"));
    const iters = parseInt(flags.iters ?? "500", 10);
    const net = buildCoarseNet(mult, seed);
    const log = trainCoarse(net, samples, {
      iterations: iters,
      lr,
      seed,
      log: (it, loss) => {
        if (it % 25 === 0) console.log(`iter ${it}: loss ${loss.toFixed(5)}`);
      },
    });
    saveCheckpoint(need(flags, "out"), net, { seed, stage: "coarse" });
    console.log(
      `trained coarse for ${log.iterations} iterations; ` +
      `final loss ${log.losses[log.losses.length - 1].toFixed(5)}`
    );
    return 0;
  }
  if (command === "train-refine") {
    const samples = loadDataset(need(flags, "data"));
    const iters = parseInt(flags.iters ?? "200", 10);
    const coarse = buildCoarseNet(mult, seed);
    loadCheckpoint(need(flags, "coarse"), coarse);
    const refine = buildRefineNet(mult, seed + 1);
    const log = trainRefine(coarse, refine, samples, {
      iterations: iters,
      lr,
      seed,
      log: (it, loss) => {
        if (it % 25 === 0) console.log(`iter ${it}: loss ${loss.toFixed(5)}`);
      },
    });
    saveCheckpoint(need(flags, "out"), refine, { seed, stage: "refine" });
    console.log(
      `trained refine for ${log.iterations} iterations; ` +
      `final loss ${log.losses[log.losses.length - 1].toFixed(5)}`
    );
    return 0;
  }
  if (command === "predict") {
    const root = need(flags, "data");
    const samples = loadDataset(root);
    const coarse = buildCoarseNet(mult, seed);
    loadCheckpoint(need(flags, "coarse"), coarse);
    const refine = buildRefineNet(mult, seed + 1);
    loadCheckpoint(need(flags, "refine"), refine);
    const outDir = need(flags, "out");
    for (const sample of samples) {
      const pred = predict(coarse, refine, sample.image);
      writePrediction(path.join(outDir, sample.id), pred);
    }
    console.log(`wrote ${samples.length} predictions under ${outDir}`);
    return 0;
  }
  console.error(`unknown command ${command}`);
  return 2;
}

process.exit(main(process.argv.slice(2)));

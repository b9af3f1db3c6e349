/**
 * Two-stage training. The coarse stage optimizes the four-term objective
 * (mask cross-entropy, attenuation MSE, flow EPE, image reconstruction) summed
 * over four scales with weights 1/2^(4-s); the refinement stage freezes every
 * coarse parameter and optimizes attenuation + flow only — no reconstruction
 * term and no tanh on the refined flow.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { CoarseNet } from "./coarsenet.js";
import { ScaleTarget, TrainSample, writeFlow, writeImageTensor } from "./data.js";
import {
  attenuationMSE,
  coarseLoss,
  compositeRefractive,
  flowEPE,
  maskCEFromLogits,
  multiscaleCombine,
  reconstructionLoss,
  refineLoss,
} from "./losses.js";
import { Adam, Rng } from "./nn.js";
import { RefineNet } from "./refinenet.js";
import { backwardScope, mulScalar, noGrad, sliceC, Tensor, zeros } from "./tensor.js";

export function coarseSampleLoss(net: CoarseNet, sample: TrainSample): Tensor {
  const outputs = net.forward(sample.image);
  const perScale: Tensor[] = [];
  for (let s = 0; s < outputs.length; s++) {
    const o = outputs[s];
    const t: ScaleTarget = sample.scales[s];
    const probFg = sliceC(o.maskProb, 1, 2);
    const lMask = maskCEFromLogits(o.maskLogits, t.mask);
    const lAtt = attenuationMSE(o.attenuation, t.attenuation);
    const lFlow = flowEPE(o.flow, t.flow, t.valid);
    const recon = compositeRefractive(
      probFg, o.attenuation, mulScalar(o.flow, t.scaleFactor), t.background
    );
    const lImage = reconstructionLoss(recon, t.image);
    perScale.push(coarseLoss(lMask, lAtt, lFlow, lImage));
  }
  return multiscaleCombine(perScale);
}

export interface TrainLog {
  losses: number[];
  iterations: number;
}

export function trainCoarse(
  net: CoarseNet,
  samples: TrainSample[],
  options: {
    iterations: number;
    lr?: number;
    seed?: number;
    stopWhen?: (loss: number, iteration: number) => boolean;
    log?: (iteration: number, loss: number) => void;
  }
): TrainLog {
  const { iterations, lr = 1e-3, seed = 0, stopWhen, log } = options;
  net.setTraining(true);
  const opt = new Adam(net.reg.params, lr);
  const rng = new Rng(seed + 1);
  const losses: number[] = [];
  for (let it = 0; it < iterations; it++) {
    const sample = samples[rng.int(samples.length)];
    net.reg.zeroGrads();
    const loss = backwardScope(() => coarseSampleLoss(net, sample));
    opt.step();
    losses.push(loss);
    if (log) log(it, loss);
    if (stopWhen && stopWhen(loss, it)) break;
  }
  return { losses, iterations: losses.length };
}

export function refineSampleLoss(
  coarse: CoarseNet, refine: RefineNet, sample: TrainSample
): Tensor {
  const full = sample.scales[sample.scales.length - 1];
  const coarseOut = coarse.forward(sample.image);
  const finest = coarseOut[coarseOut.length - 1];
  const refined = refine.forward(
    sample.image, finest.maskProb, finest.attenuation, finest.flowNorm
  );
  const lAtt = attenuationMSE(refined.attenuation, full.attenuation);
  const lFlow = flowEPE(refined.flow, full.flow, full.valid);
  return refineLoss(lAtt, lFlow);
}

export function trainRefine(
  coarse: CoarseNet,
  refine: RefineNet,
  samples: TrainSample[],
  options: {
    iterations: number;
    lr?: number;
    seed?: number;
    log?: (iteration: number, loss: number) => void;
  }
): TrainLog {
  const { iterations, lr = 1e-3, seed = 0, log } = options;
  // coarse stage is frozen: parameters detached and statistics in eval mode
  coarse.setTraining(false);
  coarse.reg.setTrainable(false);
  refine.setTraining(true);
  const opt = new Adam(refine.reg.params, lr);
  const rng = new Rng(seed + 2);
  const losses: number[] = [];
  for (let it = 0; it < iterations; it++) {
    const sample = samples[rng.int(samples.length)];
    refine.reg.zeroGrads();
    const loss = backwardScope(() => refineSampleLoss(coarse, refine, sample));
    opt.step();
    losses.push(loss);
    if (log) log(it, loss);
  }
  coarse.reg.setTrainable(true);
  return { losses, iterations: losses.length };
}

export interface Prediction {
  mask: Tensor; // [1,H,W] binary (argmax of the coarse mask probability)
  attenuation: Tensor; // [1,H,W] refined, clamped to [0, 1]
  flow: Tensor; // [2,H,W] refined
  coarseFlow: Tensor; // [2,H,W] tanh-bounded coarse flow
}

export function predict(
  coarse: CoarseNet, refine: RefineNet, image: Tensor
): Prediction {
  return noGrad(() => {
    coarse.setTraining(false);
    refine.setTraining(false);
    const outputs = coarse.forward(image);
    const finest = outputs[outputs.length - 1];
    const refined = refine.forward(
      image, finest.maskProb, finest.attenuation, finest.flowNorm
    );
    const [, h, w] = image.shape;
    const mask = zeros([1, h, w]);
    const hw = h * w;
    for (let i = 0; i < hw; i++) {
      mask.data[i] = finest.maskProb.data[hw + i] > finest.maskProb.data[i] ? 1 : 0;
    }
    const att = zeros([1, h, w]);
    for (let i = 0; i < hw; i++) {
      att.data[i] = Math.min(Math.max(refined.attenuation.data[i], 0), 1);
    }
    // refined flow is a free regression; the matte contract bounds valid
    // offsets by the frame size, so clamp before emitting
    const flow = zeros([2, h, w]);
    for (let i = 0; i < hw; i++) {
      flow.data[i] = Math.min(Math.max(refined.flow.data[i], -w), w);
      flow.data[hw + i] = Math.min(Math.max(refined.flow.data[hw + i], -h), h);
    }
    return { mask, attenuation: att, flow, coarseFlow: finest.flow };
  });
}

export function writePrediction(dir: string, pred: Prediction): void {
  writeImageTensor(path.join(dir, "mask.png"), pred.mask, 8);
  writeImageTensor(path.join(dir, "attenuation.png"), pred.attenuation, 16);
  writeFlow(path.join(dir, "flow.flo"), pred.flow);
}

// ---------------------------------------------------------------------------
// checkpoints: JSON header + raw float64 parameter / buffer payload
// ---------------------------------------------------------------------------

const CKPT_MAGIC = "RMT1";

function collectBuffers(net: CoarseNet | RefineNet): Float64Array[] {
  const states: Float64Array[] = [];
  const visit = (obj: unknown): void => {
    if (!obj || typeof obj !== "object") return;
    const rec = obj as Record<string, unknown>;
    if (rec.runningMean instanceof Float64Array && rec.runningVar instanceof Float64Array) {
      states.push(rec.runningMean, rec.runningVar);
      return;
    }
    for (const key of Object.keys(rec)) {
      const v = rec[key];
      if (Array.isArray(v)) v.forEach(visit);
      else if (v && typeof v === "object" && !(v instanceof Float64Array)) visit(v);
    }
  };
  visit(net);
  return states;
}

export function saveCheckpoint(
  filePath: string, net: CoarseNet | RefineNet, meta: Record<string, unknown> = {}
): void {
  const params = net.reg.snapshot();
  const buffers = collectBuffers(net);
  const bufTotal = buffers.reduce((n, b) => n + b.length, 0);
  const header = Buffer.from(
    JSON.stringify({
      meta: { multiplier: net.multiplier, ...meta },
      paramCount: params.length,
      bufferLengths: buffers.map((b) => b.length),
    }),
    "utf8"
  );
  const out = Buffer.alloc(8 + header.length + 8 * (params.length + bufTotal));
  out.write(CKPT_MAGIC, 0, "ascii");
  out.writeUInt32LE(header.length, 4);
  header.copy(out, 8);
  let off = 8 + header.length;
  Buffer.from(params.buffer, params.byteOffset, params.byteLength).copy(out, off);
  off += params.byteLength;
  for (const b of buffers) {
    Buffer.from(b.buffer, b.byteOffset, b.byteLength).copy(out, off);
    off += b.byteLength;
  }
  fs.mkdirSync(path.dirname(filePath), { recursive: true });
  fs.writeFileSync(filePath, out);
}

export function loadCheckpoint(
  filePath: string, net: CoarseNet | RefineNet
): Record<string, unknown> {
  const buf = fs.readFileSync(filePath);
  if (buf.toString("ascii", 0, 4) !== CKPT_MAGIC) {
    throw new Error(`${filePath}: not a trainer checkpoint`);
  }
  const headerLen = buf.readUInt32LE(4);
  const header = JSON.parse(buf.toString("utf8", 8, 8 + headerLen));
  if (header.paramCount !== net.reg.count()) {
    throw new Error(
      `checkpoint has ${header.paramCount} parameters, model has ${net.reg.count()}`
    );
  }
  let off = 8 + headerLen;
  const params = new Float64Array(header.paramCount);
  for (let i = 0; i < params.length; i++) params[i] = buf.readDoubleLE(off + 8 * i);
  off += 8 * params.length;
  net.reg.restore(params);
  const buffers = collectBuffers(net);
  const lengths: number[] = header.bufferLengths;
  if (
    lengths.length !== buffers.length ||
    lengths.some((n, i) => n !== buffers[i].length)
  ) {
    throw new Error("checkpoint batch-norm state does not match the model");
  }
  for (const b of buffers) {
    for (let i = 0; i < b.length; i++) b[i] = buf.readDoubleLE(off + 8 * i);
    off += 8 * b.length;
  }
  return header.meta;
}

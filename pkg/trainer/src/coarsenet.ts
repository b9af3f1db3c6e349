/**
 * Coarse stage: a shared 14-layer encoder (downsampling factor 64) with three
 * cross-linked decoders that predict, at four scales (/8, /4, /2, /1), a
 * 2-channel mask (softmax), a 1-channel attenuation map and a 2-channel flow
 * field. Flow passes through tanh and is multiplied by the input width, so
 * offsets stay within [-W, W] in full-resolution pixel units at every scale.
 *
 * Cross-links concatenate the three decoder branches so every decoder sees
 * the same input at each level; skip connections and the upsampled coarser
 * heads concatenate as well. A width multiplier scales every internal channel
 * count (head outputs stay 2/1/2).
 */

import { BatchNorm2d, Conv2d, ParamRegistry, Rng } from "./nn.js";
import {
  concatC,
  mulScalar,
  relu,
  softmaxC,
  tanh,
  Tensor,
  upsampleNearest2,
} from "./tensor.js";

export interface ScaleOutput {
  maskLogits: Tensor;
  maskProb: Tensor; // 2 channels, softmax-normalized; channel 1 is foreground
  attenuation: Tensor;
  flow: Tensor; // full-resolution pixel units (tanh * width)
  flowNorm: Tensor; // tanh output in [-1, 1]; fed to later layers so that
  // cross-scale features keep unit scale (pixel-unit flow would swamp
  // batch-size-1 normalization statistics)
}

export class ConvBNReLU {
  conv: Conv2d;
  bn: BatchNorm2d;

  constructor(
    reg: ParamRegistry, rng: Rng, name: string,
    cin: number, cout: number, kernel: number, stride: number, pad: number
  ) {
    this.conv = new Conv2d(reg, rng, name, cin, cout, kernel, stride, pad);
    this.bn = new BatchNorm2d(reg, `${name}.bn`, cout);
  }

  forward(x: Tensor): Tensor {
    return relu(this.bn.forward(this.conv.forward(x)));
  }
}

export class CoarseNet {
  reg = new ParamRegistry();
  multiplier: number;
  private enc: ConvBNReLU[] = [];
  private encTaps: number[] = []; // indices of conv1b, conv2b, ..., conv7b
  private branches: Record<string, ConvBNReLU[]> = {};
  private heads: Record<string, Conv2d[]> = {};
  private ch: (c: number) => number;

  constructor(multiplier = 1.0, seed = 7) {
    this.multiplier = multiplier;
    const rng = new Rng(seed);
    const ch = (c: number) => Math.max(1, Math.round(c * multiplier));
    this.ch = ch;

    const plan: Array<[string, number, number, number]> = [
      ["conv1", 3, ch(16), 1],
      ["conv1b", ch(16), ch(16), 1],
      ["conv2", ch(16), ch(16), 2],
      ["conv2b", ch(16), ch(16), 1],
      ["conv3", ch(16), ch(32), 2],
      ["conv3b", ch(32), ch(32), 1],
      ["conv4", ch(32), ch(64), 2],
      ["conv4b", ch(64), ch(64), 1],
      ["conv5", ch(64), ch(128), 2],
      ["conv5b", ch(128), ch(128), 1],
      ["conv6", ch(128), ch(256), 2],
      ["conv6b", ch(256), ch(256), 1],
      ["conv7", ch(256), ch(256), 2],
      ["conv7b", ch(256), ch(256), 1],
    ];
    plan.forEach(([name, cin, cout, stride], i) => {
      this.enc.push(new ConvBNReLU(this.reg, rng, `enc.${name}`, cin, cout, 3, stride, 1));
      if (name.endsWith("b")) this.encTaps.push(i);
    });

    // decoder branch levels: input channels under full concatenation
    const up7in = ch(256);
    const up6in = 3 * ch(256) + ch(256);
    const up5in = 3 * ch(128) + ch(128);
    const up4in = 3 * ch(64) + ch(64);
    const up3in = 3 * ch(32) + ch(32) + 5;
    const up2in = 3 * ch(16) + ch(16) + 5;
    const headIn1 = 3 * ch(16) + ch(16) + 5;
    const levels: Array<[string, number, number]> = [
      ["up7", up7in, ch(256)],
      ["up6", up6in, ch(128)],
      ["up5", up5in, ch(64)],
      ["up4", up4in, ch(32)],
      ["up3", up3in, ch(16)],
      ["up2", up2in, ch(16)],
    ];
    for (const [name, cin, cout] of levels) {
      this.branches[name] = ["m", "a", "f"].map(
        (b) => new ConvBNReLU(this.reg, rng, `dec.${name}.${b}`, cin, cout, 3, 1, 1)
      );
    }
    const headPlans: Array<[string, number]> = [
      ["h4", up4in],
      ["h3", up3in],
      ["h2", up2in],
      ["h1", headIn1],
    ];
    for (const [name, cin] of headPlans) {
      this.heads[name] = [2, 1, 2].map(
        (cout, i) =>
          new Conv2d(this.reg, rng, `head.${name}.${["m", "a", "f"][i]}`, cin, cout, 3, 1, 1)
      );
    }
  }

  paramCount(): number {
    return this.reg.count();
  }

  setTraining(flag: boolean): void {
    for (const bn of this.batchNorms()) bn.training = flag;
  }

  batchNorms(): BatchNorm2d[] {
    const bns = this.enc.map((l) => l.bn);
    for (const name of Object.keys(this.branches)) {
      for (const b of this.branches[name]) bns.push(b.bn);
    }
    return bns;
  }

  private branchForward(name: string, x: Tensor): Tensor[] {
    return this.branches[name].map((b) => upsampleNearest2(b.forward(x)));
  }

  private headForward(name: string, x: Tensor, width: number): ScaleOutput {
    const [hm, ha, hf] = this.heads[name];
    const logits = hm.forward(x);
    const prob = softmaxC(logits);
    const attenuation = ha.forward(x);
    const flowNorm = tanh(hf.forward(x));
    const flow = mulScalar(flowNorm, width);
    return { maskLogits: logits, maskProb: prob, attenuation, flow, flowNorm };
  }

  /** Input [3,H,W] with H, W divisible by 64; returns scales coarsest first. */
  forward(image: Tensor): ScaleOutput[] {
    const [, h, w] = image.shape;
    if (h % 64 !== 0 || w % 64 !== 0) {
      throw new Error(`input ${h}x${w} must be divisible by 64`);
    }
    const taps: Tensor[] = [];
    let x = image;
    this.enc.forEach((layer, i) => {
      x = layer.forward(x);
      if (this.encTaps.includes(i)) taps.push(x);
    });
    const [c1b, c2b, c3b, c4b, c5b, c6b] = taps;
    const c7b = taps[6];

    const up7 = this.branchForward("up7", c7b);
    const up6 = this.branchForward("up6", concatC([...up7, c6b]));
    const up5 = this.branchForward("up5", concatC([...up6, c5b]));
    const l4in = concatC([...up5, c4b]);
    const s4 = this.headForward("h4", l4in, w);

    const up4 = this.branchForward("up4", l4in);
    const l3in = concatC([
      ...up4, c3b,
      upsampleNearest2(s4.maskProb),
      upsampleNearest2(s4.attenuation),
      upsampleNearest2(s4.flowNorm),
    ]);
    const s3 = this.headForward("h3", l3in, w);

    const up3 = this.branchForward("up3", l3in);
    const l2in = concatC([
      ...up3, c2b,
      upsampleNearest2(s3.maskProb),
      upsampleNearest2(s3.attenuation),
      upsampleNearest2(s3.flowNorm),
    ]);
    const s2 = this.headForward("h2", l2in, w);

    const up2 = this.branchForward("up2", l2in);
    const l1in = concatC([
      ...up2, c1b,
      upsampleNearest2(s2.maskProb),
      upsampleNearest2(s2.attenuation),
      upsampleNearest2(s2.flowNorm),
    ]);
    const s1 = this.headForward("h1", l1in, w);

    return [s4, s3, s2, s1]; // coarsest (/8) first, full resolution last
  }
}

export function buildCoarseNet(multiplier = 1.0, seed = 7): CoarseNet {
  return new CoarseNet(multiplier, seed);
}

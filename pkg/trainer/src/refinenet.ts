/**
 * Refinement stage: a residual network over the concatenation of the input
 * image and the coarse outputs (softmax mask probability, attenuation, flow).
 * Three strided convolutions, five residual blocks, then two deconvolution
 * branches regress a sharper attenuation map and a more detailed flow field.
 * The refined flow is a direct prediction in pixel units — no tanh at this
 * stage. The coarse flow enters normalized to [-1, 1] (same unit-scale
 * consideration as inside the coarse decoder).
 */

import { ConvBNReLU } from "./coarsenet.js";
import { BatchNorm2d, Conv2d, ConvTranspose2d, ParamRegistry, Rng } from "./nn.js";
import { add, concatC, relu, Tensor } from "./tensor.js";

class ResBlock {
  c1: Conv2d;
  b1: BatchNorm2d;
  c2: Conv2d;
  b2: BatchNorm2d;

  constructor(reg: ParamRegistry, rng: Rng, name: string, channels: number) {
    this.c1 = new Conv2d(reg, rng, `${name}.c1`, channels, channels, 3, 1, 1);
    this.b1 = new BatchNorm2d(reg, `${name}.b1`, channels);
    this.c2 = new Conv2d(reg, rng, `${name}.c2`, channels, channels, 3, 1, 1);
    this.b2 = new BatchNorm2d(reg, `${name}.b2`, channels);
  }

  forward(x: Tensor): Tensor {
    const inner = this.b2.forward(
      this.c2.forward(relu(this.b1.forward(this.c1.forward(x))))
    );
    return relu(add(x, inner));
  }

  setTraining(flag: boolean): void {
    this.b1.training = flag;
    this.b2.training = flag;
  }

  batchNorms(): BatchNorm2d[] {
    return [this.b1, this.b2];
  }
}

class DeconvBNReLU {
  deconv: ConvTranspose2d;
  bn: BatchNorm2d;

  constructor(reg: ParamRegistry, rng: Rng, name: string, cin: number, cout: number) {
    this.deconv = new ConvTranspose2d(reg, rng, name, cin, cout, 4, 2, 1);
    this.bn = new BatchNorm2d(reg, `${name}.bn`, cout);
  }

  forward(x: Tensor): Tensor {
    return relu(this.bn.forward(this.deconv.forward(x)));
  }
}

export interface RefineOutput {
  attenuation: Tensor;
  flow: Tensor;
}

export class RefineNet {
  reg = new ParamRegistry();
  multiplier: number;
  private conv1: ConvBNReLU;
  private down: ConvBNReLU[];
  private blocks: ResBlock[];
  private deconvA: DeconvBNReLU[];
  private deconvF: DeconvBNReLU[];
  private headA: Conv2d;
  private headF: Conv2d;

  constructor(multiplier = 1.0, seed = 11) {
    this.multiplier = multiplier;
    const rng = new Rng(seed);
    const c = Math.max(1, Math.round(64 * multiplier));
    // input: image (3) + mask probability (2) + attenuation (1) + flow (2)
    this.conv1 = new ConvBNReLU(this.reg, rng, "conv1", 8, c, 9, 1, 4);
    this.down = [2, 3, 4].map(
      (i) => new ConvBNReLU(this.reg, rng, `conv${i}`, c, c, 4, 2, 1)
    );
    this.blocks = Array.from(
      { length: 5 }, (_, i) => new ResBlock(this.reg, rng, `res${i + 1}`, c)
    );
    this.deconvA = [1, 2, 3].map(
      (i) => new DeconvBNReLU(this.reg, rng, `deconv${i}_a`, c, c)
    );
    this.deconvF = [1, 2, 3].map(
      (i) => new DeconvBNReLU(this.reg, rng, `deconv${i}_f`, c, c)
    );
    this.headA = new Conv2d(this.reg, rng, "a_refined", c + 1, 1, 3, 1, 1);
    this.headF = new Conv2d(this.reg, rng, "f_refined", c + 2, 2, 3, 1, 1);
  }

  paramCount(): number {
    return this.reg.count();
  }

  setTraining(flag: boolean): void {
    for (const bn of this.batchNorms()) bn.training = flag;
  }

  batchNorms(): BatchNorm2d[] {
    return [
      this.conv1.bn,
      ...this.down.map((d) => d.bn),
      ...this.blocks.flatMap((b) => b.batchNorms()),
      ...[...this.deconvA, ...this.deconvF].map((d) => d.bn),
    ];
  }

  forward(
    image: Tensor, maskProb: Tensor, attenuation: Tensor, flow: Tensor
  ): RefineOutput {
    let x = this.conv1.forward(concatC([image, maskProb, attenuation, flow]));
    for (const d of this.down) x = d.forward(x);
    for (const b of this.blocks) x = b.forward(x);
    let xa = x;
    for (const d of this.deconvA) xa = d.forward(xa);
    let xf = x;
    for (const d of this.deconvF) xf = d.forward(xf);
    return {
      attenuation: this.headA.forward(concatC([xa, attenuation])),
      flow: this.headF.forward(concatC([xf, flow])),
    };
  }
}

export function buildRefineNet(multiplier = 1.0, seed = 11): RefineNet {
  return new RefineNet(multiplier, seed);
}

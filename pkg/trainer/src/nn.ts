/**
 * Layer wrappers with a flat parameter registry, seeded initialization and
 * the Adam optimizer. All randomness flows through Rng so runs reproduce.
 */

import { batchNorm, BatchNormState, conv2d, convTranspose2d } from "./conv.js";
import { Tensor, zeros } from "./tensor.js";

export class Rng {
  private s: number;

  constructor(seed: number) {
    this.s = seed >>> 0 || 0x9e3779b9;
  }

  /** xorshift32 uniform in [0, 1) */
  next(): number {
    let x = this.s;
    x ^= x << 13;
    x >>>= 0;
    x ^= x >> 17;
    x ^= x << 5;
    x >>>= 0;
    this.s = x;
    return x / 4294967296;
  }

  normal(): number {
    // Box-Muller; guard against log(0)
    const u = Math.max(this.next(), 1e-12);
    const v = this.next();
    return Math.sqrt(-2 * Math.log(u)) * Math.cos(2 * Math.PI * v);
  }

  int(bound: number): number {
    return Math.floor(this.next() * bound);
  }
}

export interface Param {
  name: string;
  tensor: Tensor;
}

export class ParamRegistry {
  params: Param[] = [];

  register(name: string, tensor: Tensor): Tensor {
    tensor.requiresGrad = true;
    this.params.push({ name, tensor });
    return tensor;
  }

  count(): number {
    return this.params.reduce((n, p) => n + p.tensor.size, 0);
  }

  zeroGrads(): void {
    for (const p of this.params) p.tensor.zeroGrad();
  }

  /** Order-stable byte snapshot, for freeze checks and checkpoints. */
  snapshot(): Float64Array {
    const total = this.count();
    const out = new Float64Array(total);
    let off = 0;
    for (const p of this.params) {
      out.set(p.tensor.data, off);
      off += p.tensor.size;
    }
    return out;
  }

  restore(snap: Float64Array): void {
    let off = 0;
    for (const p of this.params) {
      p.tensor.data.set(snap.subarray(off, off + p.tensor.size));
      off += p.tensor.size;
    }
  }

  setTrainable(flag: boolean): void {
    for (const p of this.params) p.tensor.requiresGrad = flag;
  }
}

function kaiming(rng: Rng, shape: number[], fanIn: number): Tensor {
  const t = zeros(shape);
  const std = Math.sqrt(2 / fanIn);
  for (let i = 0; i < t.size; i++) t.data[i] = rng.normal() * std;
  return t;
}

export class Conv2d {
  weight: Tensor;
  bias: Tensor;
  stride: number;
  pad: number;

  constructor(
    reg: ParamRegistry, rng: Rng, name: string,
    cin: number, cout: number, kernel: number, stride: number, pad: number
  ) {
    this.stride = stride;
    this.pad = pad;
    this.weight = reg.register(
      `${name}.weight`, kaiming(rng, [cout, cin, kernel, kernel], cin * kernel * kernel)
    );
    this.bias = reg.register(`${name}.bias`, zeros([cout]));
  }

  forward(x: Tensor): Tensor {
    return conv2d(x, this.weight, this.bias, this.stride, this.pad);
  }
}

export class ConvTranspose2d {
  weight: Tensor;
  bias: Tensor;
  stride: number;
  pad: number;

  constructor(
    reg: ParamRegistry, rng: Rng, name: string,
    cin: number, cout: number, kernel: number, stride: number, pad: number
  ) {
    this.stride = stride;
    this.pad = pad;
    this.weight = reg.register(
      `${name}.weight`, kaiming(rng, [cin, cout, kernel, kernel], cin * kernel * kernel)
    );
    this.bias = reg.register(`${name}.bias`, zeros([cout]));
  }

  forward(x: Tensor): Tensor {
    return convTranspose2d(x, this.weight, this.bias, this.stride, this.pad);
  }
}

export class BatchNorm2d {
  gamma: Tensor;
  beta: Tensor;
  state: BatchNormState;
  /** gates running-record updates only; normalization is always per input */
  training = true;

  constructor(reg: ParamRegistry, name: string, channels: number) {
    const gamma = zeros([channels]);
    gamma.data.fill(1);
    this.gamma = reg.register(`${name}.gamma`, gamma);
    this.beta = reg.register(`${name}.beta`, zeros([channels]));
    this.state = {
      runningMean: new Float64Array(channels),
      runningVar: new Float64Array(channels).fill(1),
    };
  }

  forward(x: Tensor): Tensor {
    return batchNorm(x, this.gamma, this.beta, this.state, this.training);
  }
}

export class Adam {
  private m: Float64Array[];
  private v: Float64Array[];
  private t = 0;

  constructor(
    public params: Param[],
    public lr = 1e-3,
    public beta1 = 0.9,
    public beta2 = 0.999,
    public eps = 1e-8
  ) {
    this.m = params.map((p) => new Float64Array(p.tensor.size));
    this.v = params.map((p) => new Float64Array(p.tensor.size));
  }

  step(): void {
    this.t += 1;
    const bc1 = 1 - Math.pow(this.beta1, this.t);
    const bc2 = 1 - Math.pow(this.beta2, this.t);
    for (let i = 0; i < this.params.length; i++) {
      const p = this.params[i].tensor;
      if (!p.grad) continue;
      const m = this.m[i];
      const v = this.v[i];
      for (let j = 0; j < p.size; j++) {
        const g = p.grad[j];
        m[j] = this.beta1 * m[j] + (1 - this.beta1) * g;
        v[j] = this.beta2 * v[j] + (1 - this.beta2) * g * g;
        p.data[j] -= (this.lr * (m[j] / bc1)) / (Math.sqrt(v[j] / bc2) + this.eps);
      }
    }
  }
}

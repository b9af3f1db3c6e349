import { describe, expect, it } from "vitest";

import { batchNorm, conv2d, convTranspose2d, warpBilinear } from "../src/conv.js";
import { Rng } from "../src/nn.js";
import {
  backwardScope,
  concatC,
  meanAll,
  mul,
  mulBroadcastC,
  noGrad,
  relu,
  sliceC,
  softmaxC,
  sub,
  tanh,
  Tensor,
  upsampleNearest2,
  zeros,
} from "../src/tensor.js";

function randTensor(rng: Rng, shape: number[], scale = 1): Tensor {
  const t = zeros(shape);
  for (let i = 0; i < t.size; i++) t.data[i] = (rng.next() * 2 - 1) * scale;
  return t;
}

/** Central-difference check of d(scalar fn)/d(t) against autograd. */
function gradCheck(
  t: Tensor, fn: () => Tensor, h = 1e-5, tol = 1e-6
): void {
  t.requiresGrad = true;
  t.zeroGrad();
  backwardScope(fn);
  const analytic = Float64Array.from(t.grad!);
  for (let i = 0; i < t.size; i++) {
    const saved = t.data[i];
    t.data[i] = saved + h;
    const up = noGrad(fn).item();
    t.data[i] = saved - h;
    const down = noGrad(fn).item();
    t.data[i] = saved;
    const numeric = (up - down) / (2 * h);
    const denom = Math.max(1, Math.abs(numeric), Math.abs(analytic[i]));
    expect(Math.abs(analytic[i] - numeric) / denom).toBeLessThan(tol);
  }
}

describe("elementwise and structural ops", () => {
  const rng = new Rng(1);

  it("mul/sub/mean gradients", () => {
    const a = randTensor(rng, [2, 3, 3]);
    const b = randTensor(rng, [2, 3, 3]);
    gradCheck(a, () => meanAll(mul(sub(a, b), sub(a, b))));
  });

  it("relu and tanh gradients", () => {
    const a = randTensor(rng, [1, 4, 4]);
    // keep away from the relu kink
    for (let i = 0; i < a.size; i++) if (Math.abs(a.data[i]) < 0.05) a.data[i] = 0.1;
    gradCheck(a, () => meanAll(relu(a)));
    gradCheck(a, () => meanAll(tanh(a)));
  });

  it("softmax gradient and normalization", () => {
    const a = randTensor(rng, [2, 3, 3], 2);
    const p = noGrad(() => softmaxC(a));
    for (let i = 0; i < 9; i++) {
      expect(p.data[i] + p.data[9 + i]).toBeCloseTo(1.0, 12);
    }
    gradCheck(a, () => meanAll(mul(softmaxC(a), softmaxC(a))));
  });

  it("concat and slice gradients", () => {
    const a = randTensor(rng, [2, 2, 2]);
    const b = randTensor(rng, [1, 2, 2]);
    gradCheck(a, () => meanAll(mul(concatC([a, b]), concatC([a, b]))));
    gradCheck(a, () => meanAll(sliceC(a, 1, 2)));
  });

  it("upsample and broadcast gradients", () => {
    const a = randTensor(rng, [2, 3, 3]);
    const m = randTensor(rng, [1, 6, 6]);
    gradCheck(a, () => meanAll(mul(upsampleNearest2(a), upsampleNearest2(a))));
    m.requiresGrad = false;
    gradCheck(a, () => meanAll(mulBroadcastC(m, upsampleNearest2(a))));
  });
});

describe("conv2d", () => {
  const rng = new Rng(2);

  it("matches direct computation", () => {
    const x = randTensor(rng, [2, 5, 5]);
    const w = randTensor(rng, [3, 2, 3, 3]);
    const y = noGrad(() => conv2d(x, w, null, 1, 1));
    expect(y.shape).toEqual([3, 5, 5]);
    // direct dot product at one location
    let want = 0;
    for (let c = 0; c < 2; c++) {
      for (let ky = 0; ky < 3; ky++) {
        for (let kx = 0; kx < 3; kx++) {
          const iy = 2 + ky - 1;
          const ix = 1 + kx - 1;
          want += x.data[(c * 5 + iy) * 5 + ix] * w.data[((1 * 2 + c) * 3 + ky) * 3 + kx];
        }
      }
    }
    expect(y.data[(1 * 5 + 2) * 5 + 1]).toBeCloseTo(want, 10);
  });

  it("gradients for input, weight and bias", () => {
    const x = randTensor(rng, [2, 4, 4]);
    const w = randTensor(rng, [2, 2, 3, 3]);
    const b = randTensor(rng, [2]);
    gradCheck(x, () => meanAll(mul(conv2d(x, w, b, 1, 1), conv2d(x, w, b, 1, 1))));
    gradCheck(w, () => meanAll(mul(conv2d(x, w, b, 1, 1), conv2d(x, w, b, 1, 1))));
    gradCheck(b, () => meanAll(mul(conv2d(x, w, b, 1, 1), conv2d(x, w, b, 1, 1))));
  });

  it("stride-2 output size", () => {
    const x = randTensor(rng, [1, 8, 8]);
    const w = randTensor(rng, [1, 1, 3, 3]);
    expect(noGrad(() => conv2d(x, w, null, 2, 1)).shape).toEqual([1, 4, 4]);
    const w4 = randTensor(rng, [1, 1, 4, 4]);
    expect(noGrad(() => conv2d(x, w4, null, 2, 1)).shape).toEqual([1, 4, 4]);
  });
});

describe("convTranspose2d", () => {
  const rng = new Rng(3);

  it("doubles spatial size with k4 s2 p1", () => {
    const x = randTensor(rng, [2, 3, 3]);
    const w = randTensor(rng, [2, 3, 4, 4]);
    expect(noGrad(() => convTranspose2d(x, w, null, 2, 1)).shape).toEqual([3, 6, 6]);
  });

  it("gradients for input and weight", () => {
    const x = randTensor(rng, [2, 3, 3]);
    const w = randTensor(rng, [2, 2, 4, 4]);
    gradCheck(x, () =>
      meanAll(mul(convTranspose2d(x, w, null, 2, 1), convTranspose2d(x, w, null, 2, 1)))
    );
    gradCheck(w, () =>
      meanAll(mul(convTranspose2d(x, w, null, 2, 1), convTranspose2d(x, w, null, 2, 1)))
    );
  });
});

describe("batchNorm", () => {
  const rng = new Rng(4);

  it("normalizes in training mode", () => {
    const x = randTensor(rng, [2, 4, 4], 3);
    const gamma = zeros([2]);
    gamma.data.fill(1);
    const beta = zeros([2]);
    const state = {
      runningMean: new Float64Array(2),
      runningVar: new Float64Array(2).fill(1),
    };
    const y = noGrad(() => batchNorm(x, gamma, beta, state, true));
    for (let c = 0; c < 2; c++) {
      let mean = 0;
      for (let i = 0; i < 16; i++) mean += y.data[c * 16 + i];
      expect(mean / 16).toBeCloseTo(0, 8);
    }
  });

  it("gradients for input, gamma, beta", () => {
    const x = randTensor(rng, [2, 3, 3], 2);
    const gamma = randTensor(rng, [2], 1);
    const beta = randTensor(rng, [2], 1);
    const state = {
      runningMean: new Float64Array(2),
      runningVar: new Float64Array(2).fill(1),
    };
    const loss = () => {
      const y = batchNorm(x, gamma, beta, state, true);
      return meanAll(mul(y, y));
    };
    gradCheck(x, loss, 1e-5, 1e-5);
    gradCheck(gamma, loss);
    gradCheck(beta, loss);
  });
});

describe("warpBilinear", () => {
  const rng = new Rng(5);

  it("identity flow reproduces the background", () => {
    const bg = randTensor(rng, [3, 5, 5]);
    const flow = zeros([2, 5, 5]);
    const y = noGrad(() => warpBilinear(bg, flow));
    expect(Array.from(y.data)).toEqual(Array.from(bg.data));
  });

  it("integer shift matches re-indexing", () => {
    const bg = randTensor(rng, [1, 4, 6]);
    const flow = zeros([2, 4, 6]);
    flow.data.fill(2, 0, 24); // dx = 2
    const y = noGrad(() => warpBilinear(bg, flow));
    expect(y.data[0]).toBeCloseTo(bg.data[2], 12);
    expect(y.data[1]).toBeCloseTo(bg.data[3], 12);
  });

  it("flow gradient matches finite differences", () => {
    // smooth background so bilinear interpolation is differentiable enough
    const bg = zeros([2, 6, 6]);
    for (let c = 0; c < 2; c++) {
      for (let y = 0; y < 6; y++) {
        for (let x = 0; x < 6; x++) {
          bg.data[(c * 6 + y) * 6 + x] =
            Math.sin(0.8 * x + 0.3 * c) * Math.cos(0.6 * y);
        }
      }
    }
    const flow = randTensor(rng, [2, 6, 6], 0.3);
    for (let i = 0; i < flow.size; i++) flow.data[i] += 0.4; // keep off grid lines
    gradCheck(flow, () => meanAll(mul(warpBilinear(bg, flow), warpBilinear(bg, flow))), 1e-6, 1e-4);
  });
});

import { describe, expect, it } from "vitest";

import { buildCoarseNet } from "../src/coarsenet.js";
import { buildRefineNet } from "../src/refinenet.js";
import { noGrad, zeros } from "../src/tensor.js";

function patternImage(size: number) {
  const img = zeros([3, size, size]);
  for (let i = 0; i < img.size; i++) img.data[i] = ((i * 37) % 101) / 101;
  return img;
}

describe("architecture conformance", () => {
  it(
    "multiplier-1 CoarseNet on 448x448: heads at 56/112/224/448 with channels (2,1,2)",
    () => {
      const net = buildCoarseNet(1.0, 7);
      net.setTraining(false);
      const outs = noGrad(() => net.forward(patternImage(448)));
      const sizes = [56, 112, 224, 448];
      expect(outs).toHaveLength(4);
      outs.forEach((o, i) => {
        expect(o.maskProb.shape).toEqual([2, sizes[i], sizes[i]]);
        expect(o.attenuation.shape).toEqual([1, sizes[i], sizes[i]]);
        expect(o.flow.shape).toEqual([2, sizes[i], sizes[i]]);
      });
    },
    300_000
  );

  it("parameter counts sit within 20% of 8M and 1M", () => {
    const coarse = buildCoarseNet(1.0, 7).paramCount();
    const refine = buildRefineNet(1.0, 11).paramCount();
    expect(coarse).toBeGreaterThanOrEqual(8_000_000 * 0.8);
    expect(coarse).toBeLessThanOrEqual(8_000_000 * 1.2);
    expect(refine).toBeGreaterThanOrEqual(1_000_000 * 0.8);
    expect(refine).toBeLessThanOrEqual(1_000_000 * 1.2);
  });

  it("width multiplier scales internal channels (~1/16 params at 0.25)", () => {
    const full = buildCoarseNet(1.0, 7).paramCount();
    const quarter = buildCoarseNet(0.25, 7).paramCount();
    expect(quarter).toBeGreaterThan(full / 18);
    expect(quarter).toBeLessThan(full / 14);
  });

  it("shape contract holds for any input divisible by 64", () => {
    const net = buildCoarseNet(0.25, 3);
    net.setTraining(false);
    for (const size of [64, 128]) {
      const outs = noGrad(() => net.forward(patternImage(size)));
      outs.forEach((o, i) => {
        const s = size / 8 * Math.pow(2, i);
        expect(o.maskProb.shape).toEqual([2, s, s]);
        expect(o.attenuation.shape).toEqual([1, s, s]);
        expect(o.flow.shape).toEqual([2, s, s]);
      });
    }
    expect(() => noGrad(() => net.forward(patternImage(96)))).toThrow(/divisible/);
  });

  it("mask head is softmax-normalized and flow is tanh-bounded by the width", () => {
    const net = buildCoarseNet(0.25, 5);
    net.setTraining(false);
    const size = 64;
    const outs = noGrad(() => net.forward(patternImage(size)));
    for (const o of outs) {
      const hw = o.maskProb.shape[1] * o.maskProb.shape[2];
      for (let i = 0; i < hw; i++) {
        expect(o.maskProb.data[i] + o.maskProb.data[hw + i]).toBeCloseTo(1.0, 10);
      }
      for (let i = 0; i < o.flow.size; i++) {
        expect(Math.abs(o.flow.data[i])).toBeLessThanOrEqual(size);
      }
    }
  });

  it("RefineNet output matches the input size with channels (1, 2)", () => {
    const coarse = buildCoarseNet(0.25, 7);
    const refine = buildRefineNet(0.25, 11);
    coarse.setTraining(false);
    refine.setTraining(false);
    const img = patternImage(64);
    const outs = noGrad(() => coarse.forward(img));
    const finest = outs[outs.length - 1];
    const refined = noGrad(() =>
      refine.forward(img, finest.maskProb, finest.attenuation, finest.flowNorm)
    );
    expect(refined.attenuation.shape).toEqual([1, 64, 64]);
    expect(refined.flow.shape).toEqual([2, 64, 64]);
  });

  it("zero-input forward stays finite", () => {
    const coarse = buildCoarseNet(0.25, 9);
    const refine = buildRefineNet(0.25, 13);
    coarse.setTraining(false);
    refine.setTraining(false);
    const img = zeros([3, 64, 64]);
    const outs = noGrad(() => coarse.forward(img));
    const finest = outs[outs.length - 1];
    const refined = noGrad(() =>
      refine.forward(img, finest.maskProb, finest.attenuation, finest.flowNorm)
    );
    for (const t of [finest.maskProb, finest.attenuation, finest.flow,
                     refined.attenuation, refined.flow]) {
      for (let i = 0; i < t.size; i++) expect(Number.isFinite(t.data[i])).toBe(true);
    }
  });
});

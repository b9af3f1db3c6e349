/**
 * Training losses. Conventions mirror the evaluation tooling exactly so the
 * two implementations agree on identical inputs (see the golden-file test):
 * mask cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7],
 * attenuation as plain MSE, flow as average end-point error over (optionally
 * masked) pixels, reconstruction as the squared channel-difference norm
 * averaged over pixels.
 */

import { warpBilinear } from "./conv.js";
import {
  add,
  addScalar,
  meanAll,
  mul,
  mulBroadcastC,
  mulScalar,
  pushBackward,
  recording,
  sub,
  Tensor,
  zeros,
} from "./tensor.js";

const CE_EPS = 1e-7;

export const COARSE_WEIGHTS = { mask: 0.1, attenuation: 1.0, flow: 0.01, image: 1.0 };
export const REFINE_WEIGHTS = { attenuation: 1.0, flow: 1.0 };

/** Per-scale weights 1/2^(S-s), coarsest first. */
export function scaleWeights(numScales = 4): number[] {
  const w: number[] = [];
  for (let s = 1; s <= numScales; s++) w.push(1 / Math.pow(2, numScales - s));
  return w;
}

export function maskCrossEntropy(prob: Tensor, gtMask: Tensor): Tensor {
  if (prob.size !== gtMask.size) throw new Error("mask CE shape mismatch");
  const n = prob.size;
  const y = zeros([1], recording() && prob.requiresGrad);
  let total = 0;
  for (let i = 0; i < n; i++) {
    const p = Math.min(Math.max(prob.data[i], CE_EPS), 1 - CE_EPS);
    const g = gtMask.data[i];
    total += g * Math.log(p) + (1 - g) * Math.log(1 - p);
  }
  y.data[0] = -total / n;
  if (y.requiresGrad) {
    pushBackward(() => {
      const go = y.grad![0];
      const gp = prob.ensureGrad();
      for (let i = 0; i < n; i++) {
        const raw = prob.data[i];
        if (raw <= CE_EPS || raw >= 1 - CE_EPS) continue; // clamped: no gradient
        const g = gtMask.data[i];
        gp[i] += (go * (-(g / raw) + (1 - g) / (1 - raw))) / n;
      }
    });
  }
  return y;
}

/**
 * Mask cross-entropy fused with the softmax, taken on the 2-channel logits.
 * Numerically identical to maskCrossEntropy(softmax(z)[fg], gt) away from
 * saturation, but its gradient (p - g)/n never vanishes, so the mask branch
 * keeps learning even when the softmax saturates. Training uses this form;
 * the probability form above is kept for parity with the evaluation package.
 */
export function maskCEFromLogits(logits: Tensor, gtMask: Tensor): Tensor {
  const [c, h, w] = logits.shape;
  if (c !== 2) throw new Error("mask logits are [2,H,W]");
  const hw = h * w;
  if (gtMask.size !== hw) throw new Error("mask CE shape mismatch");
  const y = zeros([1], recording() && logits.requiresGrad);
  let total = 0;
  for (let i = 0; i < hw; i++) {
    const z0 = logits.data[i];
    const z1 = logits.data[hw + i];
    const m = Math.max(z0, z1);
    const lse = m + Math.log(Math.exp(z0 - m) + Math.exp(z1 - m));
    const g = gtMask.data[i];
    total += g * (z1 - lse) + (1 - g) * (z0 - lse);
  }
  y.data[0] = -total / hw;
  if (y.requiresGrad) {
    pushBackward(() => {
      const go = y.grad![0];
      const gz = logits.ensureGrad();
      for (let i = 0; i < hw; i++) {
        const z0 = logits.data[i];
        const z1 = logits.data[hw + i];
        const m = Math.max(z0, z1);
        const e0 = Math.exp(z0 - m);
        const e1 = Math.exp(z1 - m);
        const p1 = e1 / (e0 + e1);
        const g = gtMask.data[i];
        gz[hw + i] += (go * (p1 - g)) / hw;
        gz[i] += (go * (g - p1)) / hw;
      }
    });
  }
  return y;
}

export function attenuationMSE(pred: Tensor, gt: Tensor): Tensor {
  const d = sub(pred, gt);
  return meanAll(mul(d, d));
}

export function flowEPE(pred: Tensor, gt: Tensor, valid: Uint8Array | null = null): Tensor {
  const [c, h, w] = pred.shape;
  if (c !== 2) throw new Error("flow tensors are [2,H,W]");
  const hw = h * w;
  let n = 0;
  if (valid) {
    for (let i = 0; i < hw; i++) if (valid[i]) n++;
  } else {
    n = hw;
  }
  const y = zeros([1], recording() && pred.requiresGrad);
  if (n === 0) return y;
  let total = 0;
  for (let i = 0; i < hw; i++) {
    if (valid && !valid[i]) continue;
    const dx = pred.data[i] - gt.data[i];
    const dy = pred.data[hw + i] - gt.data[hw + i];
    total += Math.sqrt(dx * dx + dy * dy);
  }
  y.data[0] = total / n;
  if (y.requiresGrad) {
    pushBackward(() => {
      const go = y.grad![0];
      const gp = pred.ensureGrad();
      for (let i = 0; i < hw; i++) {
        if (valid && !valid[i]) continue;
        const dx = pred.data[i] - gt.data[i];
        const dy = pred.data[hw + i] - gt.data[hw + i];
        const dist = Math.sqrt(dx * dx + dy * dy);
        if (dist === 0) continue;
        gp[i] += (go * dx) / (dist * n);
        gp[hw + i] += (go * dy) / (dist * n);
      }
    });
  }
  return y;
}

export function reconstructionLoss(recon: Tensor, target: Tensor): Tensor {
  const channels = recon.shape[0];
  const d = sub(recon, target);
  return mulScalar(meanAll(mul(d, d)), channels);
}

/**
 * Differentiable refractive composite: (1 - m) B + m a warp(B, flow).
 * `background` is a constant; gradients flow to mask, attenuation and flow.
 */
export function compositeRefractive(
  mask: Tensor, attenuation: Tensor, flow: Tensor, background: Tensor
): Tensor {
  const keep = mulBroadcastC(addScalar(mulScalar(mask, -1), 1), background);
  const warped = warpBilinear(background, flow);
  const through = mulBroadcastC(mul(mask, attenuation), warped);
  return add(keep, through);
}

export function coarseLoss(
  lMask: Tensor, lAtt: Tensor, lFlow: Tensor, lImage: Tensor
): Tensor {
  return add(
    add(mulScalar(lMask, COARSE_WEIGHTS.mask), mulScalar(lAtt, COARSE_WEIGHTS.attenuation)),
    add(mulScalar(lFlow, COARSE_WEIGHTS.flow), mulScalar(lImage, COARSE_WEIGHTS.image))
  );
}

export function multiscaleCombine(perScale: Tensor[]): Tensor {
  const ws = scaleWeights(perScale.length);
  let acc = mulScalar(perScale[0], ws[0]);
  for (let s = 1; s < perScale.length; s++) {
    acc = add(acc, mulScalar(perScale[s], ws[s]));
  }
  return acc;
}

export function refineLoss(lAtt: Tensor, lFlow: Tensor): Tensor {
  return add(
    mulScalar(lAtt, REFINE_WEIGHTS.attenuation),
    mulScalar(lFlow, REFINE_WEIGHTS.flow)
  );
}

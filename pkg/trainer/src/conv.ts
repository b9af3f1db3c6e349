/**
 * Convolution, transposed convolution, batch normalization and bilinear
 * warping, with hand-written backward passes. Convolutions run as chunked
 * im2col + matmul to bound the working-set size.
 */

import { Tensor, pushBackward, recording, zeros } from "./tensor.js";

const CHUNK_DOUBLES = 1 << 21; // ~16 MB column buffer per chunk

/** C[M,N] += A[M,K] * B[K,N] */
function mmAcc(
  a: Float64Array, m: number, k: number,
  b: Float64Array, n: number, c: Float64Array
): void {
  for (let i = 0; i < m; i++) {
    const arow = i * k;
    const crow = i * n;
    for (let p = 0; p < k; p++) {
      const av = a[arow + p];
      if (av === 0) continue;
      const brow = p * n;
      for (let j = 0; j < n; j++) c[crow + j] += av * b[brow + j];
    }
  }
}

/** C[K,N] += A^T[K,M] * B[M,N] for A[M,K] */
function mmATAcc(
  a: Float64Array, m: number, k: number,
  b: Float64Array, n: number, c: Float64Array
): void {
  for (let i = 0; i < m; i++) {
    const arow = i * k;
    const brow = i * n;
    for (let p = 0; p < k; p++) {
      const av = a[arow + p];
      if (av === 0) continue;
      const crow = p * n;
      for (let j = 0; j < n; j++) c[crow + j] += av * b[brow + j];
    }
  }
}

/** C[M,K] += A[M,N] * B^T[N,K] for B[K,N] */
function mmBTAcc(
  a: Float64Array, m: number, n: number,
  b: Float64Array, k: number, c: Float64Array
): void {
  for (let i = 0; i < m; i++) {
    const arow = i * n;
    const crow = i * k;
    for (let p = 0; p < k; p++) {
      const brow = p * n;
      let s = 0;
      for (let j = 0; j < n; j++) s += a[arow + j] * b[brow + j];
      c[crow + p] += s;
    }
  }
}

function convOutSize(inSize: number, kernel: number, stride: number, pad: number): number {
  return Math.floor((inSize + 2 * pad - kernel) / stride) + 1;
}

function im2colChunk(
  x: Float64Array, ci: number, h: number, w: number,
  kh: number, kw: number, stride: number, pad: number,
  ow: number, row0: number, row1: number, cols: Float64Array
): void {
  const n = (row1 - row0) * ow;
  cols.fill(0, 0, ci * kh * kw * n);
  for (let c = 0; c < ci; c++) {
    const xBase = c * h * w;
    for (let ky = 0; ky < kh; ky++) {
      for (let kx = 0; kx < kw; kx++) {
        const colRow = ((c * kh + ky) * kw + kx) * n;
        for (let oy = row0; oy < row1; oy++) {
          const iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const outBase = colRow + (oy - row0) * ow;
          const inBase = xBase + iy * w;
          for (let ox = 0; ox < ow; ox++) {
            const ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) cols[outBase + ox] = x[inBase + ix];
          }
        }
      }
    }
  }
}

function col2imChunkAdd(
  cols: Float64Array, ci: number, h: number, w: number,
  kh: number, kw: number, stride: number, pad: number,
  ow: number, row0: number, row1: number, dx: Float64Array
): void {
  const n = (row1 - row0) * ow;
  for (let c = 0; c < ci; c++) {
    const xBase = c * h * w;
    for (let ky = 0; ky < kh; ky++) {
      for (let kx = 0; kx < kw; kx++) {
        const colRow = ((c * kh + ky) * kw + kx) * n;
        for (let oy = row0; oy < row1; oy++) {
          const iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const outBase = colRow + (oy - row0) * ow;
          const inBase = xBase + iy * w;
          for (let ox = 0; ox < ow; ox++) {
            const ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dx[inBase + ix] += cols[outBase + ox];
          }
        }
      }
    }
  }
}

export function conv2d(
  x: Tensor, weight: Tensor, bias: Tensor | null,
  stride: number, pad: number
): Tensor {
  const [ci, h, w] = x.shape;
  const [co, wci, kh, kw] = weight.shape;
  if (wci !== ci) throw new Error(`conv2d: ${ci} input channels, weight expects ${wci}`);
  const oh = convOutSize(h, kh, stride, pad);
  const ow = convOutSize(w, kw, stride, pad);
  const k = ci * kh * kw;
  const needsGrad =
    recording() && (x.requiresGrad || weight.requiresGrad || (bias?.requiresGrad ?? false));
  const y = zeros([co, oh, ow], needsGrad);
  const hw = oh * ow;
  const chunkRows = Math.max(1, Math.min(oh, Math.floor(CHUNK_DOUBLES / (k * ow))));
  const cols = new Float64Array(k * chunkRows * ow);
  const yChunk = new Float64Array(co * chunkRows * ow);
  for (let r0 = 0; r0 < oh; r0 += chunkRows) {
    const r1 = Math.min(oh, r0 + chunkRows);
    const n = (r1 - r0) * ow;
    im2colChunk(x.data, ci, h, w, kh, kw, stride, pad, ow, r0, r1, cols);
    yChunk.fill(0, 0, co * n);
    mmAcc(weight.data, co, k, cols, n, yChunk);
    for (let c = 0; c < co; c++) {
      const b = bias ? bias.data[c] : 0;
      const src = c * n;
      const dst = c * hw + r0 * ow;
      for (let i = 0; i < n; i++) y.data[dst + i] = yChunk[src + i] + b;
    }
  }
  if (needsGrad) {
    pushBackward(() => {
      const g = y.grad!;
      const gw = weight.requiresGrad ? weight.ensureGrad() : null;
      const gx = x.requiresGrad ? x.ensureGrad() : null;
      const gb = bias && bias.requiresGrad ? bias.ensureGrad() : null;
      const colsB = new Float64Array(k * chunkRows * ow);
      const gChunk = new Float64Array(co * chunkRows * ow);
      const dcols = gx ? new Float64Array(k * chunkRows * ow) : null;
      for (let r0 = 0; r0 < oh; r0 += chunkRows) {
        const r1 = Math.min(oh, r0 + chunkRows);
        const n = (r1 - r0) * ow;
        for (let c = 0; c < co; c++) {
          const src = c * hw + r0 * ow;
          const dst = c * n;
          for (let i = 0; i < n; i++) gChunk[dst + i] = g[src + i];
        }
        if (gb) {
          for (let c = 0; c < co; c++) {
            let s = 0;
            for (let i = 0; i < n; i++) s += gChunk[c * n + i];
            gb[c] += s;
          }
        }
        if (gw) {
          im2colChunk(x.data, ci, h, w, kh, kw, stride, pad, ow, r0, r1, colsB);
          mmBTAcc(gChunk, co, n, colsB, k, gw);
        }
        if (gx && dcols) {
          dcols.fill(0, 0, k * n);
          mmATAcc(weight.data, co, k, gChunk, n, dcols);
          col2imChunkAdd(dcols, ci, h, w, kh, kw, stride, pad, ow, r0, r1, gx);
        }
      }
    });
  }
  return y;
}

/** Transposed convolution; weight is [CI, CO, KH, KW] (gradient-of-conv layout). */
export function convTranspose2d(
  x: Tensor, weight: Tensor, bias: Tensor | null,
  stride: number, pad: number
): Tensor {
  const [ci, h, w] = x.shape;
  const [wci, co, kh, kw] = weight.shape;
  if (wci !== ci) throw new Error(`convT: ${ci} input channels, weight expects ${wci}`);
  const oh = (h - 1) * stride - 2 * pad + kh;
  const ow = (w - 1) * stride - 2 * pad + kw;
  const needsGrad =
    recording() && (x.requiresGrad || weight.requiresGrad || (bias?.requiresGrad ?? false));
  const y = zeros([co, oh, ow], needsGrad);
  if (bias) {
    for (let c = 0; c < co; c++) y.data.fill(bias.data[c], c * oh * ow, (c + 1) * oh * ow);
  }
  const khw = kh * kw;
  for (let c = 0; c < ci; c++) {
    for (let iy = 0; iy < h; iy++) {
      for (let ix = 0; ix < w; ix++) {
        const v = x.data[(c * h + iy) * w + ix];
        if (v === 0) continue;
        for (let ky = 0; ky < kh; ky++) {
          const oy = iy * stride - pad + ky;
          if (oy < 0 || oy >= oh) continue;
          for (let kx = 0; kx < kw; kx++) {
            const ox = ix * stride - pad + kx;
            if (ox < 0 || ox >= ow) continue;
            const wBase = (c * co * khw) + ky * kw + kx;
            for (let oc = 0; oc < co; oc++) {
              y.data[(oc * oh + oy) * ow + ox] += v * weight.data[wBase + oc * khw];
            }
          }
        }
      }
    }
  }
  if (needsGrad) {
    pushBackward(() => {
      const g = y.grad!;
      const gx = x.requiresGrad ? x.ensureGrad() : null;
      const gw = weight.requiresGrad ? weight.ensureGrad() : null;
      const gb = bias && bias.requiresGrad ? bias.ensureGrad() : null;
      if (gb) {
        for (let c = 0; c < co; c++) {
          let s = 0;
          const base = c * oh * ow;
          for (let i = 0; i < oh * ow; i++) s += g[base + i];
          gb[c] += s;
        }
      }
      for (let c = 0; c < ci; c++) {
        for (let iy = 0; iy < h; iy++) {
          for (let ix = 0; ix < w; ix++) {
            const xi = (c * h + iy) * w + ix;
            const v = x.data[xi];
            let dxAcc = 0;
            for (let ky = 0; ky < kh; ky++) {
              const oy = iy * stride - pad + ky;
              if (oy < 0 || oy >= oh) continue;
              for (let kx = 0; kx < kw; kx++) {
                const ox = ix * stride - pad + kx;
                if (ox < 0 || ox >= ow) continue;
                const wBase = (c * co * khw) + ky * kw + kx;
                for (let oc = 0; oc < co; oc++) {
                  const go = g[(oc * oh + oy) * ow + ox];
                  if (gx) dxAcc += go * weight.data[wBase + oc * khw];
                  if (gw) gw[wBase + oc * khw] += go * v;
                }
              }
            }
            if (gx) gx[xi] += dxAcc;
          }
        }
      }
    });
  }
  return y;
}

export interface BatchNormState {
  runningMean: Float64Array;
  runningVar: Float64Array;
}

/**
 * Batch normalization over H,W per channel. Batches here are single samples,
 * so normalization always uses the input's own statistics (instance-norm
 * semantics): a momentum-averaged running record cannot reproduce the
 * per-input rescaling the weights were trained against. `updateRunning`
 * gates bookkeeping of the running record only — inference is a pure,
 * deterministic function of the input either way.
 */
export function batchNorm(
  x: Tensor, gamma: Tensor, beta: Tensor,
  state: BatchNormState, updateRunning: boolean,
  momentum = 0.1, eps = 1e-5
): Tensor {
  const [c, h, w] = x.shape;
  const hw = h * w;
  const needsGrad =
    recording() && (x.requiresGrad || gamma.requiresGrad || beta.requiresGrad);
  const y = zeros([c, h, w], needsGrad);
  const mean = new Float64Array(c);
  const invStd = new Float64Array(c);
  for (let ch = 0; ch < c; ch++) {
    const base = ch * hw;
    let s = 0;
    for (let i = 0; i < hw; i++) s += x.data[base + i];
    const mu = s / hw;
    let v = 0;
    for (let i = 0; i < hw; i++) {
      const d = x.data[base + i] - mu;
      v += d * d;
    }
    const varv = v / hw;
    if (updateRunning) {
      state.runningMean[ch] = (1 - momentum) * state.runningMean[ch] + momentum * mu;
      state.runningVar[ch] = (1 - momentum) * state.runningVar[ch] + momentum * varv;
    }
    mean[ch] = mu;
    invStd[ch] = 1 / Math.sqrt(varv + eps);
    const gsc = gamma.data[ch] * invStd[ch];
    const b = beta.data[ch];
    for (let i = 0; i < hw; i++) y.data[base + i] = gsc * (x.data[base + i] - mu) + b;
  }
  if (needsGrad) {
    pushBackward(() => {
      const g = y.grad!;
      const gx = x.requiresGrad ? x.ensureGrad() : null;
      const gg = gamma.requiresGrad ? gamma.ensureGrad() : null;
      const gb = beta.requiresGrad ? beta.ensureGrad() : null;
      for (let ch = 0; ch < c; ch++) {
        const base = ch * hw;
        const mu = mean[ch];
        const is = invStd[ch];
        let sumG = 0;
        let sumGX = 0;
        for (let i = 0; i < hw; i++) {
          const xh = (x.data[base + i] - mu) * is;
          sumG += g[base + i];
          sumGX += g[base + i] * xh;
        }
        if (gb) gb[ch] += sumG;
        if (gg) gg[ch] += sumGX;
        if (gx) {
          const gsc = gamma.data[ch] * is;
          const mg = sumG / hw;
          const mgx = sumGX / hw;
          for (let i = 0; i < hw; i++) {
            const xh = (x.data[base + i] - mu) * is;
            gx[base + i] += gsc * (g[base + i] - mg - xh * mgx);
          }
        }
      }
    });
  }
  return y;
}

/**
 * Backward-warp a constant background by a flow field (border-clamped
 * bilinear sampling); gradients propagate to the flow only.
 */
export function warpBilinear(background: Tensor, flow: Tensor): Tensor {
  const [c, h, w] = background.shape;
  if (flow.shape[0] !== 2 || flow.shape[1] !== h || flow.shape[2] !== w) {
    throw new Error(`flow ${flow.shape} does not match background ${background.shape}`);
  }
  const hw = h * w;
  const needsGrad = recording() && flow.requiresGrad;
  const y = zeros([c, h, w], needsGrad);
  const compute = (gradFlow: Float64Array | null, gOut: Float64Array | null) => {
    for (let py = 0; py < h; py++) {
      for (let px = 0; px < w; px++) {
        const i = py * w + px;
        let u = px + flow.data[i];
        let v = py + flow.data[hw + i];
        const inU = u > 0 && u < w - 1;
        const inV = v > 0 && v < h - 1;
        u = Math.min(Math.max(u, 0), w - 1);
        v = Math.min(Math.max(v, 0), h - 1);
        const x0 = Math.floor(u);
        const y0 = Math.floor(v);
        const x1 = Math.min(x0 + 1, w - 1);
        const y1 = Math.min(y0 + 1, h - 1);
        const fx = u - x0;
        const fy = v - y0;
        let du = 0;
        let dv = 0;
        for (let ch = 0; ch < c; ch++) {
          const base = ch * hw;
          const v00 = background.data[base + y0 * w + x0];
          const v01 = background.data[base + y0 * w + x1];
          const v10 = background.data[base + y1 * w + x0];
          const v11 = background.data[base + y1 * w + x1];
          const top = v00 + fx * (v01 - v00);
          const bot = v10 + fx * (v11 - v10);
          if (gOut === null) {
            y.data[base + i] = top + fy * (bot - top);
          } else {
            const go = gOut[base + i];
            du += go * ((1 - fy) * (v01 - v00) + fy * (v11 - v10));
            dv += go * (bot - top);
          }
        }
        if (gOut !== null && gradFlow) {
          if (inU) gradFlow[i] += du;
          if (inV) gradFlow[hw + i] += dv;
        }
      }
    }
  };
  compute(null, null);
  if (needsGrad) {
    pushBackward(() => compute(flow.ensureGrad(), y.grad!));
  }
  return y;
}

/** Non-differentiable 2x average pooling (for constant targets). */
export function avgPool2Const(x: Tensor): Tensor {
  const [c, h, w] = x.shape;
  const oh = Math.floor(h / 2);
  const ow = Math.floor(w / 2);
  const y = zeros([c, oh, ow]);
  for (let ch = 0; ch < c; ch++) {
    for (let i = 0; i < oh; i++) {
      for (let j = 0; j < ow; j++) {
        const base = (ch * h + 2 * i) * w + 2 * j;
        y.data[(ch * oh + i) * ow + j] =
          0.25 * (x.data[base] + x.data[base + 1] + x.data[base + w] + x.data[base + w + 1]);
      }
    }
  }
  return y;
}

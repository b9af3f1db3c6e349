/**
 * Minimal reverse-mode autograd over dense float64 tensors.
 *
 * Tensors are CHW-shaped (no batch dimension; training iterates one sample at
 * a time). Operations record backward closures on a global tape; backward()
 * replays the tape in reverse. Wrap inference in noGrad() to skip recording.
 */

export class Tensor {
  data: Float64Array;
  shape: number[];
  grad: Float64Array | null = null;
  requiresGrad: boolean;

  constructor(data: Float64Array, shape: number[], requiresGrad = false) {
    if (data.length !== shape.reduce((a, b) => a * b, 1)) {
      throw new Error(`data length ${data.length} != shape ${shape}`);
    }
    this.data = data;
    this.shape = shape.slice();
    this.requiresGrad = requiresGrad;
  }

  get size(): number {
    return this.data.length;
  }

  ensureGrad(): Float64Array {
    if (!this.grad) this.grad = new Float64Array(this.size);
    return this.grad;
  }

  zeroGrad(): void {
    if (this.grad) this.grad.fill(0);
  }

  item(): number {
    if (this.size !== 1) throw new Error("item() needs a scalar tensor");
    return this.data[0];
  }

  clone(): Tensor {
    return new Tensor(this.data.slice(), this.shape, this.requiresGrad);
  }
}

export function zeros(shape: number[], requiresGrad = false): Tensor {
  return new Tensor(
    new Float64Array(shape.reduce((a, b) => a * b, 1)),
    shape,
    requiresGrad
  );
}

export function fromArray(values: ArrayLike<number>, shape: number[]): Tensor {
  return new Tensor(Float64Array.from(values as number[]), shape);
}

let tape: Array<() => void> | null = [];

export function recording(): boolean {
  return tape !== null;
}

export function pushBackward(fn: () => void): void {
  if (tape) tape.push(fn);
}

export function noGrad<T>(fn: () => T): T {
  const saved = tape;
  tape = null;
  try {
    return fn();
  } finally {
    tape = saved;
  }
}

/** Run fn, backpropagate from the scalar it returns, then drop the tape. */
export function backwardScope(fn: () => Tensor): number {
  const saved = tape;
  tape = [];
  try {
    const loss = fn();
    if (loss.size !== 1) throw new Error("backward needs a scalar loss");
    loss.ensureGrad()[0] = 1.0;
    for (let i = tape.length - 1; i >= 0; i--) tape[i]();
    return loss.data[0];
  } finally {
    tape = saved;
  }
}

function out(shape: number[], needsGrad: boolean): Tensor {
  return zeros(shape, needsGrad && recording());
}

function sameShape(a: Tensor, b: Tensor): void {
  if (a.shape.length !== b.shape.length || a.shape.some((d, i) => d !== b.shape[i])) {
    throw new Error(`shape mismatch ${a.shape} vs ${b.shape}`);
  }
}

export function add(a: Tensor, b: Tensor): Tensor {
  sameShape(a, b);
  const y = out(a.shape, a.requiresGrad || b.requiresGrad);
  for (let i = 0; i < y.size; i++) y.data[i] = a.data[i] + b.data[i];
  if (y.requiresGrad) {
    pushBackward(() => {
      const g = y.grad!;
      if (a.requiresGrad) {
        const ga = a.ensureGrad();
        for (let i = 0; i < g.length; i++) ga[i] += g[i];
      }
      if (b.requiresGrad) {
        const gb = b.ensureGrad();
        for (let i = 0; i < g.length; i++) gb[i] += g[i];
      }
    });
  }
  return y;
}

export function sub(a: Tensor, b: Tensor): Tensor {
  sameShape(a, b);
  const y = out(a.shape, a.requiresGrad || b.requiresGrad);
  for (let i = 0; i < y.size; i++) y.data[i] = a.data[i] - b.data[i];
  if (y.requiresGrad) {
    pushBackward(() => {
      const g = y.grad!;
      if (a.requiresGrad) {
        const ga = a.ensureGrad();
        for (let i = 0; i < g.length; i++) ga[i] += g[i];
      }
      if (b.requiresGrad) {
        const gb = b.ensureGrad();
        for (let i = 0; i < g.length; i++) gb[i] -= g[i];
      }
    });
  }
  return y;
}

export function mul(a: Tensor, b: Tensor): Tensor {
  sameShape(a, b);
  const y = out(a.shape, a.requiresGrad || b.requiresGrad);
  for (let i = 0; i < y.size; i++) y.data[i] = a.data[i] * b.data[i];
  if (y.requiresGrad) {
    pushBackward(() => {
      const g = y.grad!;
      if (a.requiresGrad) {
        const ga = a.ensureGrad();
        for (let i = 0; i < g.length; i++) ga[i] += g[i] * b.data[i];
      }
      if (b.requiresGrad) {
        const gb = b.ensureGrad();
        for (let i = 0; i < g.length; i++) gb[i] += g[i] * a.data[i];
      }
    });
  }
  return y;
}

export function mulScalar(a: Tensor, s: number): Tensor {
  const y = out(a.shape, a.requiresGrad);
  for (let i = 0; i < y.size; i++) y.data[i] = a.data[i] * s;
  if (y.requiresGrad) {
    pushBackward(() => {
      const g = y.grad!;
      const ga = a.ensureGrad();
      for (let i = 0; i < g.length; i++) ga[i] += g[i] * s;
    });
  }
  return y;
}

export function addScalar(a: Tensor, s: number): Tensor {
  const y = out(a.shape, a.requiresGrad);
  for (let i = 0; i < y.size; i++) y.data[i] = a.data[i] + s;
  if (y.requiresGrad) {
    pushBackward(() => {
      const g = y.grad!;
      const ga = a.ensureGrad();
      for (let i = 0; i < g.length; i++) ga[i] += g[i];
    });
  }
  return y;
}

/** Multiply a [1,H,W] map onto every channel of a [C,H,W] tensor. */
export function mulBroadcastC(map: Tensor, x: Tensor): Tensor {
  const [c, h, w] = x.shape;
  if (map.shape[0] !== 1 || map.shape[1] !== h || map.shape[2] !== w) {
    throw new Error(`broadcast map ${map.shape} does not match ${x.shape}`);
  }
  const hw = h * w;
  const y = out(x.shape, map.requiresGrad || x.requiresGrad);
  for (let ch = 0; ch < c; ch++) {
    const base = ch * hw;
    for (let i = 0; i < hw; i++) y.data[base + i] = map.data[i] * x.data[base + i];
  }
  if (y.requiresGrad) {
    pushBackward(() => {
      const g = y.grad!;
      if (map.requiresGrad) {
        const gm = map.ensureGrad();
        for (let ch = 0; ch < c; ch++) {
          const base = ch * hw;
          for (let i = 0; i < hw; i++) gm[i] += g[base + i] * x.data[base + i];
        }
      }
      if (x.requiresGrad) {
        const gx = x.ensureGrad();
        for (let ch = 0; ch < c; ch++) {
          const base = ch * hw;
          for (let i = 0; i < hw; i++) gx[base + i] += g[base + i] * map.data[i];
        }
      }
    });
  }
  return y;
}

export function relu(a: Tensor): Tensor {
  const y = out(a.shape, a.requiresGrad);
  for (let i = 0; i < y.size; i++) y.data[i] = a.data[i] > 0 ? a.data[i] : 0;
  if (y.requiresGrad) {
    pushBackward(() => {
      const g = y.grad!;
      const ga = a.ensureGrad();
      for (let i = 0; i < g.length; i++) if (a.data[i] > 0) ga[i] += g[i];
    });
  }
  return y;
}

export function tanh(a: Tensor): Tensor {
  const y = out(a.shape, a.requiresGrad);
  for (let i = 0; i < y.size; i++) y.data[i] = Math.tanh(a.data[i]);
  if (y.requiresGrad) {
    pushBackward(() => {
      const g = y.grad!;
      const ga = a.ensureGrad();
      for (let i = 0; i < g.length; i++) ga[i] += g[i] * (1 - y.data[i] * y.data[i]);
    });
  }
  return y;
}

/** Channel-wise softmax over a [C,H,W] tensor (C small). */
export function softmaxC(a: Tensor): Tensor {
  const [c, h, w] = a.shape;
  const hw = h * w;
  const y = out(a.shape, a.requiresGrad);
  for (let i = 0; i < hw; i++) {
    let m = -Infinity;
    for (let ch = 0; ch < c; ch++) m = Math.max(m, a.data[ch * hw + i]);
    let sum = 0;
    for (let ch = 0; ch < c; ch++) {
      const e = Math.exp(a.data[ch * hw + i] - m);
      y.data[ch * hw + i] = e;
      sum += e;
    }
    for (let ch = 0; ch < c; ch++) y.data[ch * hw + i] /= sum;
  }
  if (y.requiresGrad) {
    pushBackward(() => {
      const g = y.grad!;
      const ga = a.ensureGrad();
      for (let i = 0; i < hw; i++) {
        let dot = 0;
        for (let ch = 0; ch < c; ch++) dot += g[ch * hw + i] * y.data[ch * hw + i];
        for (let ch = 0; ch < c; ch++) {
          ga[ch * hw + i] += y.data[ch * hw + i] * (g[ch * hw + i] - dot);
        }
      }
    });
  }
  return y;
}

export function concatC(parts: Tensor[]): Tensor {
  const [, h, w] = parts[0].shape;
  let cTotal = 0;
  for (const p of parts) {
    if (p.shape.length !== 3 || p.shape[1] !== h || p.shape[2] !== w) {
      throw new Error("concatC needs [C,H,W] tensors with equal H,W");
    }
    cTotal += p.shape[0];
  }
  const y = out([cTotal, h, w], parts.some((p) => p.requiresGrad));
  let offset = 0;
  for (const p of parts) {
    y.data.set(p.data, offset);
    offset += p.size;
  }
  if (y.requiresGrad) {
    pushBackward(() => {
      const g = y.grad!;
      let off = 0;
      for (const p of parts) {
        if (p.requiresGrad) {
          const gp = p.ensureGrad();
          for (let i = 0; i < p.size; i++) gp[i] += g[off + i];
        }
        off += p.size;
      }
    });
  }
  return y;
}

/** Slice channels [from, to) of a [C,H,W] tensor. */
export function sliceC(a: Tensor, from: number, to: number): Tensor {
  const [c, h, w] = a.shape;
  if (from < 0 || to > c || from >= to) throw new Error(`bad channel slice ${from}:${to}`);
  const hw = h * w;
  const y = out([to - from, h, w], a.requiresGrad);
  y.data.set(a.data.subarray(from * hw, to * hw));
  if (y.requiresGrad) {
    pushBackward(() => {
      const g = y.grad!;
      const ga = a.ensureGrad();
      for (let i = 0; i < g.length; i++) ga[from * hw + i] += g[i];
    });
  }
  return y;
}

export function upsampleNearest2(a: Tensor): Tensor {
  const [c, h, w] = a.shape;
  const y = out([c, 2 * h, 2 * w], a.requiresGrad);
  for (let ch = 0; ch < c; ch++) {
    for (let i = 0; i < h; i++) {
      for (let j = 0; j < w; j++) {
        const v = a.data[(ch * h + i) * w + j];
        const base = (ch * 2 * h + 2 * i) * 2 * w + 2 * j;
        y.data[base] = v;
        y.data[base + 1] = v;
        y.data[base + 2 * w] = v;
        y.data[base + 2 * w + 1] = v;
      }
    }
  }
  if (y.requiresGrad) {
    pushBackward(() => {
      const g = y.grad!;
      const ga = a.ensureGrad();
      for (let ch = 0; ch < c; ch++) {
        for (let i = 0; i < h; i++) {
          for (let j = 0; j < w; j++) {
            const base = (ch * 2 * h + 2 * i) * 2 * w + 2 * j;
            ga[(ch * h + i) * w + j] +=
              g[base] + g[base + 1] + g[base + 2 * w] + g[base + 2 * w + 1];
          }
        }
      }
    });
  }
  return y;
}

export function meanAll(a: Tensor): Tensor {
  const y = out([1], a.requiresGrad);
  let s = 0;
  for (let i = 0; i < a.size; i++) s += a.data[i];
  y.data[0] = s / a.size;
  if (y.requiresGrad) {
    pushBackward(() => {
      const g = y.grad![0] / a.size;
      const ga = a.ensureGrad();
      for (let i = 0; i < ga.length; i++) ga[i] += g;
    });
  }
  return y;
}

export function addTensors(parts: Tensor[]): Tensor {
  let acc = parts[0];
  for (let i = 1; i < parts.length; i++) acc = add(acc, parts[i]);
  return acc;
}

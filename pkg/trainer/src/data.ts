/**
 * Dataset I/O against the generator's on-disk formats: INI manifests, 8/16-bit
 * grayscale and 8-bit RGB PNGs, and the Middlebury-style .flo container.
 * The PNG codec is self-contained (node:zlib) and handles exactly the files
 * the pipeline produces: non-interlaced grayscale or truecolor, depth 8 or 16.
 */

import * as fs from "node:fs";
import * as path from "node:path";
import * as zlib from "node:zlib";

import { avgPool2Const } from "./conv.js";
import { Tensor, zeros } from "./tensor.js";

// ---------------------------------------------------------------------------
// PNG
// ---------------------------------------------------------------------------

const PNG_SIGNATURE = Buffer.from([137, 80, 78, 71, 13, 10, 26, 10]);

const CRC_TABLE = (() => {
  const table = new Int32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    table[n] = c;
  }
  return table;
})();

function crc32(buf: Buffer): number {
  let c = 0xffffffff;
  for (let i = 0; i < buf.length; i++) {
    c = CRC_TABLE[(c ^ buf[i]) & 0xff] ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

function chunk(type: string, data: Buffer): Buffer {
  const head = Buffer.alloc(4);
  head.writeUInt32BE(data.length);
  const body = Buffer.concat([Buffer.from(type, "ascii"), data]);
  const crc = Buffer.alloc(4);
  crc.writeUInt32BE(crc32(body));
  return Buffer.concat([head, body, crc]);
}

export interface PngImage {
  width: number;
  height: number;
  channels: number; // 1 or 3
  bitDepth: 8 | 16;
  /** row-major, channel-interleaved, raw integer samples */
  samples: Uint16Array;
}

export function decodePng(filePath: string): PngImage {
  const buf = fs.readFileSync(filePath);
  if (!buf.subarray(0, 8).equals(PNG_SIGNATURE)) {
    throw new Error(`${filePath}: not a PNG`);
  }
  let pos = 8;
  let width = 0;
  let height = 0;
  let bitDepth = 8;
  let colorType = 0;
  const idat: Buffer[] = [];
  while (pos < buf.length) {
    const len = buf.readUInt32BE(pos);
    const type = buf.toString("ascii", pos + 4, pos + 8);
    const data = buf.subarray(pos + 8, pos + 8 + len);
    if (type === "IHDR") {
      width = data.readUInt32BE(0);
      height = data.readUInt32BE(4);
      bitDepth = data[8];
      colorType = data[9];
      if (data[12] !== 0) throw new Error(`${filePath}: interlaced PNG unsupported`);
      if (![0, 2].includes(colorType) || ![8, 16].includes(bitDepth)) {
        throw new Error(`${filePath}: unsupported PNG (type ${colorType}/${bitDepth})`);
      }
    } else if (type === "IDAT") {
      idat.push(Buffer.from(data));
    } else if (type === "IEND") {
      break;
    }
    pos += 12 + len;
  }
  const channels = colorType === 2 ? 3 : 1;
  const bytesPerSample = bitDepth / 8;
  const bpp = channels * bytesPerSample;
  const stride = width * bpp;
  const raw = zlib.inflateSync(Buffer.concat(idat));
  const out = new Uint16Array(width * height * channels);
  const prev = Buffer.alloc(stride);
  const cur = Buffer.alloc(stride);
  for (let y = 0; y < height; y++) {
    const filter = raw[y * (stride + 1)];
    raw.copy(cur, 0, y * (stride + 1) + 1, (y + 1) * (stride + 1));
    for (let i = 0; i < stride; i++) {
      const a = i >= bpp ? cur[i - bpp] : 0;
      const b = prev[i];
      const c = i >= bpp ? prev[i - bpp] : 0;
      let v = cur[i];
      switch (filter) {
        case 0:
          break;
        case 1:
          v = (v + a) & 0xff;
          break;
        case 2:
          v = (v + b) & 0xff;
          break;
        case 3:
          v = (v + Math.floor((a + b) / 2)) & 0xff;
          break;
        case 4: {
          const p = a + b - c;
          const pa = Math.abs(p - a);
          const pb = Math.abs(p - b);
          const pc = Math.abs(p - c);
          v = (v + (pa <= pb && pa <= pc ? a : pb <= pc ? b : c)) & 0xff;
          break;
        }
        default:
          throw new Error(`${filePath}: unknown PNG filter ${filter}`);
      }
      cur[i] = v;
    }
    for (let x = 0; x < width * channels; x++) {
      out[y * width * channels + x] =
        bitDepth === 16 ? cur.readUInt16BE(x * 2) : cur[x];
    }
    cur.copy(prev);
  }
  return { width, height, channels, bitDepth: bitDepth as 8 | 16, samples: out };
}

export function encodePng(img: PngImage): Buffer {
  const { width, height, channels, bitDepth, samples } = img;
  const bytesPerSample = bitDepth / 8;
  const stride = width * channels * bytesPerSample;
  const raw = Buffer.alloc(height * (stride + 1));
  for (let y = 0; y < height; y++) {
    const rowStart = y * (stride + 1);
    raw[rowStart] = 0; // filter: none
    for (let x = 0; x < width * channels; x++) {
      const v = samples[y * width * channels + x];
      if (bitDepth === 16) raw.writeUInt16BE(v, rowStart + 1 + x * 2);
      else raw[rowStart + 1 + x] = v;
    }
  }
  const ihdr = Buffer.alloc(13);
  ihdr.writeUInt32BE(width, 0);
  ihdr.writeUInt32BE(height, 4);
  ihdr[8] = bitDepth;
  ihdr[9] = channels === 3 ? 2 : 0;
  return Buffer.concat([
    PNG_SIGNATURE,
    chunk("IHDR", ihdr),
    chunk("IDAT", zlib.deflateSync(raw, { level: 6 })),
    chunk("IEND", Buffer.alloc(0)),
  ]);
}

/** Read a PNG as a [C,H,W] tensor scaled to [0, 1]. */
export function readImageTensor(filePath: string): Tensor {
  const png = decodePng(filePath);
  const { width: w, height: h, channels: c } = png;
  const peak = png.bitDepth === 16 ? 65535 : 255;
  const t = zeros([c, h, w]);
  for (let y = 0; y < h; y++) {
    for (let x = 0; x < w; x++) {
      for (let ch = 0; ch < c; ch++) {
        t.data[(ch * h + y) * w + x] = png.samples[(y * w + x) * c + ch] / peak;
      }
    }
  }
  return t;
}

/** Write a [C,H,W] tensor in [0, 1] as a PNG (depth 8 or 16). */
export function writeImageTensor(
  filePath: string, t: Tensor, bitDepth: 8 | 16 = 8
): void {
  const [c, h, w] = t.shape;
  const peak = bitDepth === 16 ? 65535 : 255;
  const samples = new Uint16Array(c * h * w);
  for (let y = 0; y < h; y++) {
    for (let x = 0; x < w; x++) {
      for (let ch = 0; ch < c; ch++) {
        const v = Math.min(Math.max(t.data[(ch * h + y) * w + x], 0), 1);
        samples[(y * w + x) * c + ch] = Math.round(v * peak);
      }
    }
  }
  fs.mkdirSync(path.dirname(filePath), { recursive: true });
  fs.writeFileSync(
    filePath,
    encodePng({ width: w, height: h, channels: c, bitDepth, samples })
  );
}

// ---------------------------------------------------------------------------
// flow container
// ---------------------------------------------------------------------------

const FLOW_MAGIC = "PIEH";
const FLOW_INVALID = 1e10;

export interface FlowData {
  width: number;
  height: number;
  /** [2,H,W] tensor, dx then dy planes, full-resolution pixels */
  flow: Tensor;
  valid: Uint8Array;
}

export function readFlow(filePath: string): FlowData {
  const buf = fs.readFileSync(filePath);
  if (buf.toString("ascii", 0, 4) !== FLOW_MAGIC) {
    throw new Error(`${filePath}: bad flow magic`);
  }
  const w = buf.readInt32LE(4);
  const h = buf.readInt32LE(8);
  if (buf.length !== 12 + 8 * w * h) throw new Error(`${filePath}: truncated flow file`);
  const flow = zeros([2, h, w]);
  const valid = new Uint8Array(h * w).fill(1);
  for (let i = 0; i < h * w; i++) {
    const dx = buf.readFloatLE(12 + 8 * i);
    const dy = buf.readFloatLE(16 + 8 * i);
    if (dx > 1e9 && dy > 1e9) {
      valid[i] = 0;
    } else {
      flow.data[i] = dx;
      flow.data[h * w + i] = dy;
    }
  }
  return { width: w, height: h, flow, valid };
}

export function writeFlow(filePath: string, flow: Tensor, valid?: Uint8Array): void {
  const [c, h, w] = flow.shape;
  if (c !== 2) throw new Error("flow tensor must be [2,H,W]");
  const buf = Buffer.alloc(12 + 8 * w * h);
  buf.write(FLOW_MAGIC, 0, "ascii");
  buf.writeInt32LE(w, 4);
  buf.writeInt32LE(h, 8);
  for (let i = 0; i < h * w; i++) {
    if (valid && !valid[i]) {
      buf.writeFloatLE(FLOW_INVALID, 12 + 8 * i);
      buf.writeFloatLE(FLOW_INVALID, 16 + 8 * i);
    } else {
      buf.writeFloatLE(Math.fround(flow.data[i]), 12 + 8 * i);
      buf.writeFloatLE(Math.fround(flow.data[h * w + i]), 16 + 8 * i);
    }
  }
  fs.mkdirSync(path.dirname(filePath), { recursive: true });
  fs.writeFileSync(filePath, buf);
}

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

export interface ManifestSample {
  id: string;
  category: string;
  files: Record<string, string>;
}

export function readManifest(root: string): ManifestSample[] {
  const text = fs.readFileSync(path.join(root, "manifest.ini"), "utf8");
  const samples: ManifestSample[] = [];
  let current: ManifestSample | null = null;
  for (const rawLine of text.split(/\r?\n/)) {
    const line = rawLine.trim();
    if (!line || line.startsWith("#") || line.startsWith(";")) continue;
    const section = line.match(/^\[(.+)\]$/);
    if (section) {
      const name = section[1];
      current = null;
      if (name.startsWith("sample ")) {
        current = { id: name.slice(7), category: "", files: {} };
        samples.push(current);
      }
      continue;
    }
    const eq = line.indexOf("=");
    if (eq < 0 || !current) continue;
    const key = line.slice(0, eq).trim();
    const value = line.slice(eq + 1).trim();
    if (key === "category") current.category = value;
    else if (key !== "seed") current.files[key] = value;
  }
  samples.sort((a, b) => a.id.localeCompare(b.id));
  return samples;
}

// ---------------------------------------------------------------------------
// training samples with ground-truth pyramids
// ---------------------------------------------------------------------------

export interface ScaleTarget {
  image: Tensor;
  background: Tensor;
  mask: Tensor; // [1,h,w], binary
  attenuation: Tensor; // [1,h,w]
  flow: Tensor; // [2,h,w], full-resolution pixel units
  valid: Uint8Array;
  scaleFactor: number; // h_s / H
}

export interface TrainSample {
  id: string;
  image: Tensor;
  background: Tensor;
  scales: ScaleTarget[]; // coarsest (/8) first
}

function poolFlowValid(flow: Tensor, valid: Uint8Array): [Tensor, Uint8Array] {
  const [, h, w] = flow.shape;
  const oh = Math.floor(h / 2);
  const ow = Math.floor(w / 2);
  const hw = h * w;
  const out = zeros([2, oh, ow]);
  const ov = new Uint8Array(oh * ow);
  for (let i = 0; i < oh; i++) {
    for (let j = 0; j < ow; j++) {
      let n = 0;
      let sx = 0;
      let sy = 0;
      for (const [dy, dx] of [[0, 0], [0, 1], [1, 0], [1, 1]]) {
        const src = (2 * i + dy) * w + 2 * j + dx;
        if (valid[src]) {
          n += 1;
          sx += flow.data[src];
          sy += flow.data[hw + src];
        }
      }
      if (n > 0) {
        out.data[i * ow + j] = sx / n;
        out.data[oh * ow + i * ow + j] = sy / n;
        ov[i * ow + j] = 1;
      }
    }
  }
  return [out, ov];
}

function binarize(mask: Tensor): Tensor {
  const out = zeros(mask.shape);
  for (let i = 0; i < mask.size; i++) out.data[i] = mask.data[i] >= 0.5 ? 1 : 0;
  return out;
}

export function loadTrainSample(root: string, sample: ManifestSample): TrainSample {
  const file = (key: string) => path.join(root, sample.files[key]);
  const image = readImageTensor(file("input"));
  const background = readImageTensor(file("background"));
  const mask = readImageTensor(file("mask"));
  const attenuation = readImageTensor(file("attenuation"));
  const { flow, valid } = readFlow(file("flow"));

  const scales: ScaleTarget[] = [];
  let im = image;
  let bg = background;
  let mk = mask;
  let at = attenuation;
  let fl = flow;
  let vd = valid;
  let factor = 1.0;
  scales.push({
    image: im, background: bg, mask: binarize(mk), attenuation: at,
    flow: fl, valid: vd, scaleFactor: factor,
  });
  for (let level = 0; level < 3; level++) {
    im = avgPool2Const(im);
    bg = avgPool2Const(bg);
    mk = avgPool2Const(mk);
    at = avgPool2Const(at);
    [fl, vd] = poolFlowValid(fl, vd);
    factor /= 2;
    scales.push({
      image: im, background: bg, mask: binarize(mk), attenuation: at,
      flow: fl, valid: vd, scaleFactor: factor,
    });
  }
  scales.reverse(); // coarsest first
  return { id: sample.id, image, background, scales };
}

export function loadDataset(root: string): TrainSample[] {
  return readManifest(root).map((s) => loadTrainSample(root, s));
}

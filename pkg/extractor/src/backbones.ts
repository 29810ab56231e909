/** Frozen feature encoders behind a width-reporting interface.
 *
 * This build ships the `ref-*` family: deterministic stand-ins that honor
 * the same contract a pretrained encoder must satisfy -- fixed published
 * width, eval-mode determinism (same input, same bytes out), and
 * sensitivity to input changes. Heavyweight pretrained models plug in
 * behind these interfaces; nothing downstream may assume a dimension,
 * it reads the width from the backbone and records it in file headers.
 */

import { ConfigError, DataError } from './errors.js';
import { Image } from './ppm.js';
import { SplitMix64 } from './rng.js';

export interface VisualBackbone {
  readonly id: string;
  /** Embedding width; lands in the AAGF header as d_ft. */
  readonly width: number;
  encode(img: Image): Float32Array;
}

export interface TextBackbone {
  readonly id: string;
  /** Embedding width; lands in the AAGC header as d_txt. */
  readonly width: number;
  encode(text: string): Float32Array;
}

const VISUAL_WIDTHS: Record<string, number> = {
  'ref-s': 24,
  'ref-b': 48,
  'ref-l': 96,
};

const TEXT_WIDTHS: Record<string, number> = {
  'ref-txt-s': 16,
  'ref-txt-b': 32,
};

/** Patch grid for the reference visual encoder. */
const GRID = 4;
/** Per-patch statistics: mean R, mean G, mean B, luma spread. */
const PATCH_STATS = 4;

interface Affine {
  w: Float64Array; // width x inDim, row-major
  b: Float64Array;
}

const affineCache = new Map<string, Affine>();

function frozenAffine(key: string, inDim: number, outDim: number): Affine {
  let cached = affineCache.get(key);
  if (!cached) {
    const rng = new SplitMix64(key);
    const w = rng.fillGaussian(outDim * inDim);
    const scale = 1 / Math.sqrt(inDim);
    for (let i = 0; i < w.length; i++) w[i]! *= scale;
    cached = { w, b: rng.fillGaussian(outDim) };
    affineCache.set(key, cached);
  }
  return cached;
}

function patchStats(img: Image): Float64Array {
  if (img.width < GRID || img.height < GRID) {
    throw new DataError(
      `reference visual backbone needs at least ${GRID}x${GRID} pixels, ` +
      `got ${img.width}x${img.height}`);
  }
  const out = new Float64Array(GRID * GRID * PATCH_STATS);
  for (let py = 0; py < GRID; py++) {
    const y0 = Math.floor((py * img.height) / GRID);
    const y1 = Math.floor(((py + 1) * img.height) / GRID);
    for (let px = 0; px < GRID; px++) {
      const x0 = Math.floor((px * img.width) / GRID);
      const x1 = Math.floor(((px + 1) * img.width) / GRID);
      let sr = 0, sg = 0, sb = 0, sl = 0, sl2 = 0;
      const n = (y1 - y0) * (x1 - x0);
      for (let y = y0; y < y1; y++) {
        for (let x = x0; x < x1; x++) {
          const at = (y * img.width + x) * 3;
          const r = img.data[at]!;
          const g = img.data[at + 1]!;
          const b = img.data[at + 2]!;
          sr += r; sg += g; sb += b;
          const luma = 0.299 * r + 0.587 * g + 0.114 * b;
          sl += luma; sl2 += luma * luma;
        }
      }
      const at = (py * GRID + px) * PATCH_STATS;
      out[at] = sr / n / 255;
      out[at + 1] = sg / n / 255;
      out[at + 2] = sb / n / 255;
      const meanL = sl / n;
      out[at + 3] = Math.sqrt(Math.max(sl2 / n - meanL * meanL, 0)) / 255;
    }
  }
  return out;
}

class RefVisual implements VisualBackbone {
  constructor(readonly id: string, readonly width: number) {}

  encode(img: Image): Float32Array {
    const x = patchStats(img);
    const { w, b } = frozenAffine(`visual:${this.id}`, x.length, this.width);
    const out = new Float32Array(this.width);
    for (let i = 0; i < this.width; i++) {
      let acc = b[i]!;
      const row = i * x.length;
      for (let j = 0; j < x.length; j++) acc += w[row + j]! * x[j]!;
      out[i] = Math.tanh(acc);
    }
    return out;
  }
}

class RefText implements TextBackbone {
  constructor(readonly id: string, readonly width: number) {}

  encode(text: string): Float32Array {
    const tokens = text.trim().toLowerCase().split(/\s+/).filter((t) => t.length);
    if (!tokens.length) throw new DataError('cannot encode empty text');
    // Bag of hashed token vectors with a position decay, so word order
    // matters and identical strings always land on identical bytes.
    const acc = new Float64Array(this.width);
    tokens.forEach((token, idx) => {
      const v = new SplitMix64(`text:${this.id}:token:${token}`)
        .fillGaussian(this.width);
      const wPos = 1 / Math.sqrt(1 + idx);
      for (let i = 0; i < this.width; i++) acc[i]! += wPos * v[i]!;
    });
    const out = new Float32Array(this.width);
    const norm = Math.sqrt(tokens.length);
    for (let i = 0; i < this.width; i++) out[i] = Math.tanh(acc[i]! / norm);
    return out;
  }
}

export function visualBackbone(id: string): VisualBackbone {
  const width = VISUAL_WIDTHS[id];
  if (width === undefined) {
    throw new ConfigError(
      `unknown visual backbone '${id}'; this build ships ` +
      `${Object.keys(VISUAL_WIDTHS).join(', ')}`);
  }
  return new RefVisual(id, width);
}

export function textBackbone(id: string): TextBackbone {
  const width = TEXT_WIDTHS[id];
  if (width === undefined) {
    throw new ConfigError(
      `unknown text backbone '${id}'; this build ships ` +
      `${Object.keys(TEXT_WIDTHS).join(', ')}`);
  }
  return new RefText(id, width);
}

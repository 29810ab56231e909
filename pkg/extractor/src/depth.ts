/** Depth channel: estimate, normalize, colormap, then embed like RGB.
 *
 * The reference depth estimator is a luminance proxy (bright pixels read
 * as near, dark as far). The map is normalized per image so min lands at
 * exactly 0 and max at exactly 1, then rendered through a perceptually
 * uniform colormap into a plain RGB image that the visual backbone
 * consumes unchanged.
 */

import { VisualBackbone } from './backbones.js';
import { Image, makeImage } from './ppm.js';

/** Viridis anchors at t = 0, 1/8, ..., 1; linear blend between them. */
const VIRIDIS: ReadonlyArray<readonly [number, number, number]> = [
  [68, 1, 84],
  [71, 44, 122],
  [59, 81, 139],
  [44, 113, 142],
  [33, 144, 141],
  [39, 173, 129],
  [92, 200, 99],
  [170, 220, 50],
  [253, 231, 37],
];

export function colormap(t: number): [number, number, number] {
  const clamped = Math.min(Math.max(t, 0), 1);
  const pos = clamped * (VIRIDIS.length - 1);
  const lo = Math.min(Math.floor(pos), VIRIDIS.length - 2);
  const frac = pos - lo;
  const a = VIRIDIS[lo]!;
  const b = VIRIDIS[lo + 1]!;
  return [
    Math.round(a[0] + frac * (b[0] - a[0])),
    Math.round(a[1] + frac * (b[1] - a[1])),
    Math.round(a[2] + frac * (b[2] - a[2])),
  ];
}

/** Per-pixel normalized depth in [0, 1]; constant images map to 0.5. */
export function estimateDepth(img: Image): Float64Array {
  const n = img.width * img.height;
  const depth = new Float64Array(n);
  let min = Infinity;
  let max = -Infinity;
  for (let i = 0; i < n; i++) {
    const at = i * 3;
    const luma = 0.299 * img.data[at]! + 0.587 * img.data[at + 1]!
      + 0.114 * img.data[at + 2]!;
    const d = 1 - luma / 255;
    depth[i] = d;
    if (d < min) min = d;
    if (d > max) max = d;
  }
  if (max === min) {
    // A constant image carries no depth ordering; mid-range keeps the
    // downstream embedding finite without inventing structure.
    depth.fill(0.5);
    return depth;
  }
  const span = max - min;
  for (let i = 0; i < n; i++) depth[i] = (depth[i]! - min) / span;
  return depth;
}

export function depthToImage(img: Image): Image {
  const depth = estimateDepth(img);
  const out = makeImage(img.width, img.height);
  for (let i = 0; i < depth.length; i++) {
    const [r, g, b] = colormap(depth[i]!);
    out.data[i * 3] = r;
    out.data[i * 3 + 1] = g;
    out.data[i * 3 + 2] = b;
  }
  return out;
}

export function encodeDepth(img: Image, backbone: VisualBackbone): Float32Array {
  return backbone.encode(depthToImage(img));
}

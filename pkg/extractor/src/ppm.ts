/** Binary PPM (P6) images: the one format the fixtures need, no codecs. */

import { FormatError } from './errors.js';

export interface Image {
  width: number;
  height: number;
  /** Interleaved RGB, row-major, length = width * height * 3. */
  data: Uint8Array;
}

export function makeImage(width: number, height: number): Image {
  if (width < 1 || height < 1) {
    throw new FormatError(`image dimensions must be positive, got ${width}x${height}`);
  }
  return { width, height, data: new Uint8Array(width * height * 3) };
}

export function setPixel(img: Image, x: number, y: number,
                         r: number, g: number, b: number): void {
  const at = (y * img.width + x) * 3;
  img.data[at] = r;
  img.data[at + 1] = g;
  img.data[at + 2] = b;
}

export function encodePpm(img: Image): Buffer {
  if (img.data.length !== img.width * img.height * 3) {
    throw new FormatError(
      `pixel buffer is ${img.data.length} bytes, expected ${img.width * img.height * 3}`);
  }
  const header = Buffer.from(`P6\n${img.width} ${img.height}\n255\n`, 'ascii');
  return Buffer.concat([header, Buffer.from(img.data)]);
}

export function decodePpm(raw: Buffer, where = 'ppm'): Image {
  // Header: "P6", whitespace-separated width, height, maxval, then a
  // single whitespace byte before the pixel block.
  if (raw.length < 2 || raw[0] !== 0x50 || raw[1] !== 0x36) {
    throw new FormatError(`${where}: not a P6 ppm`);
  }
  let pos = 2;
  const isSpace = (b: number) => b === 0x20 || b === 0x09 || b === 0x0a || b === 0x0d;
  const nextInt = (): number => {
    while (pos < raw.length) {
      if (raw[pos] === 0x23) {
        // comment runs to end of line
        while (pos < raw.length && raw[pos] !== 0x0a) pos++;
      } else if (isSpace(raw[pos]!)) {
        pos++;
      } else {
        break;
      }
    }
    const start = pos;
    while (pos < raw.length && !isSpace(raw[pos]!) && raw[pos] !== 0x23) pos++;
    if (pos === start) throw new FormatError(`${where}: truncated header`);
    const text = raw.subarray(start, pos).toString('ascii');
    if (!/^\d+$/.test(text)) throw new FormatError(`${where}: bad header token '${text}'`);
    return parseInt(text, 10);
  };
  const width = nextInt();
  const height = nextInt();
  const maxval = nextInt();
  if (width < 1 || height < 1) {
    throw new FormatError(`${where}: bad dimensions ${width}x${height}`);
  }
  if (maxval !== 255) {
    throw new FormatError(`${where}: only maxval 255 is supported, got ${maxval}`);
  }
  if (pos >= raw.length || !isSpace(raw[pos]!)) {
    throw new FormatError(`${where}: missing separator before pixel data`);
  }
  pos++;
  const need = width * height * 3;
  if (raw.length - pos !== need) {
    throw new FormatError(
      `${where}: pixel block is ${raw.length - pos} bytes, expected ${need}`);
  }
  return { width, height, data: new Uint8Array(raw.subarray(pos)) };
}

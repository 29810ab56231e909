import { describe, expect, it } from 'vitest';

import { FormatError } from '../src/errors.js';
import { decodePpm, encodePpm, makeImage, setPixel } from '../src/ppm.js';

describe('ppm codec', () => {
  it('round-trips pixels exactly', () => {
    const img = makeImage(3, 2);
    setPixel(img, 0, 0, 255, 0, 0);
    setPixel(img, 2, 1, 1, 2, 3);
    const back = decodePpm(encodePpm(img));
    expect(back.width).toBe(3);
    expect(back.height).toBe(2);
    expect(Array.from(back.data)).toEqual(Array.from(img.data));
  });

  it('parses headers with comments and mixed whitespace', () => {
    const pixels = Buffer.alloc(6, 7);
    const raw = Buffer.concat([
      Buffer.from('P6 # comment\n# another\n 2\t1\n255\n', 'ascii'),
      pixels,
    ]);
    const img = decodePpm(raw);
    expect(img.width).toBe(2);
    expect(img.height).toBe(1);
    expect(img.data[5]).toBe(7);
  });

  it('rejects non-P6 data', () => {
    expect(() => decodePpm(Buffer.from('P3\n1 1\n255\n000')))
      .toThrow(FormatError);
  });

  it('rejects a maxval other than 255', () => {
    const raw = Buffer.concat([
      Buffer.from('P6\n1 1\n65535\n', 'ascii'),
      Buffer.alloc(3),
    ]);
    expect(() => decodePpm(raw)).toThrow(/maxval/);
  });

  it('rejects a short pixel block', () => {
    const raw = Buffer.concat([
      Buffer.from('P6\n2 2\n255\n', 'ascii'),
      Buffer.alloc(11),
    ]);
    expect(() => decodePpm(raw)).toThrow(/pixel block/);
  });

  it('rejects trailing bytes after the pixel block', () => {
    const raw = Buffer.concat([encodePpm(makeImage(2, 2)), Buffer.from([0])]);
    expect(() => decodePpm(raw)).toThrow(FormatError);
  });
});

import { describe, expect, it } from 'vitest';

import { DataError, FormatError } from '../src/errors.js';
import {
  DatasetMeta,
  EmbeddingRecord,
  encodeAagc,
  encodeAagf,
  readAagfHeader,
} from '../src/formats.js';

const meta: DatasetMeta = {
  dFt: 3,
  dTxt: 2,
  nClasses: 4,
  historyLen: 2,
  frames: 1,
  deltaMs: 1000,
  depthSource: 'estimated',
};

function record(overrides: Partial<EmbeddingRecord> = {}): EmbeddingRecord {
  return {
    sampleId: 7,
    label: 2,
    history: new Int32Array([-1, 3]),
    rgb: new Float32Array([0.5, -1.25, 2]),
    depth: new Float32Array([0, 0.25, -3]),
    desc: new Float32Array([1.5, -0.5]),
    ...overrides,
  };
}

describe('aagf encoding', () => {
  it('lays out the 48-byte header exactly', () => {
    const raw = encodeAagf([record()], meta);
    expect(raw.subarray(0, 4).toString('ascii')).toBe('AAGF');
    expect(raw.readUInt16LE(4)).toBe(1); // version
    expect(raw.readUInt16LE(6)).toBe(1); // desc flag
    expect(Number(raw.readBigUInt64LE(8))).toBe(1);
    expect(raw.readUInt32LE(16)).toBe(3); // d_ft
    expect(raw.readUInt32LE(20)).toBe(2); // d_txt
    expect(raw.readUInt32LE(24)).toBe(4); // n_classes
    expect(raw.readUInt32LE(28)).toBe(2); // history_len
    expect(raw.readUInt32LE(32)).toBe(1); // frames
    expect(raw.readUInt32LE(36)).toBe(1000); // delta_ms
    expect(raw.readUInt8(40)).toBe(2); // estimated
    expect(Array.from(raw.subarray(41, 48))).toEqual([0, 0, 0, 0, 0, 0, 0]);
  });

  it('sizes records as fixed + history + 2 frames + desc', () => {
    const raw = encodeAagf([record(), record({ sampleId: 8 })], meta);
    const recordSize = 8 + 4 + 2 * 4 + 2 * (3 * 4) + 2 * 4;
    expect(raw.length).toBe(48 + 2 * recordSize);
  });

  it('writes record payloads little-endian at the right offsets', () => {
    const raw = encodeAagf([record()], meta);
    expect(Number(raw.readBigUInt64LE(48))).toBe(7); // sample_id
    expect(raw.readUInt32LE(56)).toBe(2); // label
    expect(raw.readInt32LE(60)).toBe(-1); // history pad
    expect(raw.readInt32LE(64)).toBe(3);
    expect(raw.readFloatLE(68)).toBeCloseTo(0.5, 6); // first rgb value
    expect(raw.readFloatLE(80)).toBe(0); // first depth value
    expect(raw.readFloatLE(92)).toBeCloseTo(1.5, 6); // first desc value
  });

  it('clears the desc flag when no record carries one', () => {
    const noDesc = record({ desc: undefined });
    const raw = encodeAagf([noDesc], meta);
    expect(raw.readUInt16LE(6)).toBe(0);
    expect(raw.length).toBe(48 + 8 + 4 + 8 + 24);
  });

  it('rejects mixed desc presence', () => {
    expect(() => encodeAagf([record(), record({ desc: undefined })], meta))
      .toThrow(FormatError);
  });

  it('rejects out-of-range labels and history ids', () => {
    expect(() => encodeAagf([record({ label: 4 })], meta)).toThrow(DataError);
    expect(() => encodeAagf([record({ history: new Int32Array([-2, 0]) })], meta))
      .toThrow(DataError);
  });

  it('rejects rows that do not match the header', () => {
    expect(() => encodeAagf([record({ rgb: new Float32Array(2) })], meta))
      .toThrow(FormatError);
    expect(() => encodeAagf([record({ desc: new Float32Array(3) })], meta))
      .toThrow(FormatError);
  });

  it('round-trips the header through readAagfHeader', () => {
    const parsed = readAagfHeader(encodeAagf([record()], meta));
    expect(parsed.meta).toEqual(meta);
    expect(parsed.nSamples).toBe(1);
    expect(parsed.hasDesc).toBe(true);
    expect(() => readAagfHeader(Buffer.from('JUNKJUNK')))
      .toThrow(FormatError);
  });
});

describe('aagc encoding', () => {
  it('lays out header, rows, and length-prefixed names', () => {
    const rows = [new Float32Array([1, 2]), new Float32Array([3, 4])];
    const raw = encodeAagc(rows, ['a', 'bc']);
    expect(raw.subarray(0, 4).toString('ascii')).toBe('AAGC');
    expect(raw.readUInt16LE(4)).toBe(1);
    expect(raw.readUInt32LE(6)).toBe(2);
    expect(raw.readUInt32LE(10)).toBe(2);
    expect(raw.readFloatLE(14)).toBe(1);
    expect(raw.readFloatLE(26)).toBe(4);
    expect(raw.readUInt16LE(30)).toBe(1);
    expect(raw.subarray(32, 33).toString()).toBe('a');
    expect(raw.readUInt16LE(33)).toBe(2);
    expect(raw.subarray(35).toString()).toBe('bc');
  });

  it('encodes names as UTF-8 with byte lengths', () => {
    // 14-byte header + one f32 row = 18, then u16 length + bytes.
    const raw = encodeAagc([new Float32Array([0])], ['café']);
    expect(raw.readUInt16LE(18)).toBe(5);
    expect(raw.subarray(20).toString('utf-8')).toBe('café');
  });

  it('rejects row/name count and width mismatches', () => {
    expect(() => encodeAagc([new Float32Array([1])], [])).toThrow(FormatError);
    expect(() => encodeAagc(
      [new Float32Array([1]), new Float32Array([1, 2])], ['a', 'b']))
      .toThrow(FormatError);
    expect(() => encodeAagc([], [])).toThrow(DataError);
  });
});

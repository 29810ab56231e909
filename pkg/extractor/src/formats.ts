/** Byte-exact AAGF/AAGC writers (little-endian, versioned, atomic).
 *
 * The layout is the cross-component contract: files written here must
 * parse under the consumer's validation with zero special-casing.
 *
 * AAGF header (48 bytes): magic "AAGF", u16 version, u16 flags (bit 0 =
 * description embeddings present), u64 n_samples, u32 d_ft, u32 d_txt,
 * u32 n_classes, u32 history_len, u32 frames, u32 delta_ms, u8
 * depth_source, 7 reserved zero bytes. Each record: u64 sample_id, u32
 * label, i32 history[history_len], f32 rgb[frames * d_ft], f32
 * depth[frames * d_ft], then f32 desc[d_txt] when flagged.
 *
 * AAGC: magic "AAGC", u16 version, u32 n_classes, u32 d_txt, f32 rows,
 * then per class a u16 byte length and the UTF-8 name.
 */

import { mkdirSync, renameSync, writeFileSync } from 'node:fs';
import { dirname, join } from 'node:path';

import { DataError, FormatError } from './errors.js';

export const AAGF_VERSION = 1;
export const AAGC_VERSION = 1;
const FLAG_DESC = 1;

export const DEPTH_CODES = { absent: 0, gt: 1, estimated: 2 } as const;
export type DepthSource = keyof typeof DEPTH_CODES;

export interface DatasetMeta {
  dFt: number;
  dTxt: number;
  nClasses: number;
  historyLen: number;
  frames: number;
  deltaMs: number;
  depthSource: DepthSource;
}

export interface EmbeddingRecord {
  sampleId: number;
  label: number;
  /** Prior action ids, most recent last, -1 where the sequence is shorter. */
  history: Int32Array;
  rgb: Float32Array;
  depth: Float32Array;
  desc?: Float32Array;
}

function checkRecord(rec: EmbeddingRecord, meta: DatasetMeta, index: number): void {
  const where = `record ${index} (sample ${rec.sampleId})`;
  const frameLen = meta.frames * meta.dFt;
  if (rec.rgb.length !== frameLen || rec.depth.length !== frameLen) {
    throw new FormatError(
      `${where}: rgb/depth lengths ${rec.rgb.length}/${rec.depth.length} ` +
      `do not match header ${meta.frames}x${meta.dFt}`);
  }
  if (rec.history.length !== meta.historyLen) {
    throw new FormatError(
      `${where}: history length ${rec.history.length} does not match ` +
      `header ${meta.historyLen}`);
  }
  if (!Number.isInteger(rec.label) || rec.label < 0 || rec.label >= meta.nClasses) {
    throw new DataError(`${where}: label ${rec.label} outside [0, ${meta.nClasses})`);
  }
  for (const id of rec.history) {
    if (id < -1 || id >= meta.nClasses) {
      throw new DataError(`${where}: history ids outside [-1, ${meta.nClasses})`);
    }
  }
  if (rec.desc !== undefined && rec.desc.length !== meta.dTxt) {
    throw new FormatError(
      `${where}: desc width ${rec.desc.length} does not match header d_txt ${meta.dTxt}`);
  }
}

function f32Bytes(arr: Float32Array): Buffer {
  const out = Buffer.allocUnsafe(arr.length * 4);
  for (let i = 0; i < arr.length; i++) out.writeFloatLE(arr[i]!, i * 4);
  return out;
}

export function encodeAagf(records: EmbeddingRecord[], meta: DatasetMeta): Buffer {
  const hasDesc = records.length > 0 && records[0]!.desc !== undefined;
  const header = Buffer.alloc(48);
  header.write('AAGF', 0, 'ascii');
  header.writeUInt16LE(AAGF_VERSION, 4);
  header.writeUInt16LE(hasDesc ? FLAG_DESC : 0, 6);
  header.writeBigUInt64LE(BigInt(records.length), 8);
  header.writeUInt32LE(meta.dFt, 16);
  header.writeUInt32LE(meta.dTxt, 20);
  header.writeUInt32LE(meta.nClasses, 24);
  header.writeUInt32LE(meta.historyLen, 28);
  header.writeUInt32LE(meta.frames, 32);
  header.writeUInt32LE(meta.deltaMs, 36);
  header.writeUInt8(DEPTH_CODES[meta.depthSource], 40);

  const chunks: Buffer[] = [header];
  records.forEach((rec, i) => {
    if ((rec.desc !== undefined) !== hasDesc) {
      throw new FormatError(
        `record ${i} (sample ${rec.sampleId}): desc presence differs ` +
        'from the rest of the file');
    }
    checkRecord(rec, meta, i);
    const fixed = Buffer.allocUnsafe(12);
    fixed.writeBigUInt64LE(BigInt(rec.sampleId), 0);
    fixed.writeUInt32LE(rec.label, 8);
    chunks.push(fixed);
    const history = Buffer.allocUnsafe(rec.history.length * 4);
    rec.history.forEach((id, j) => history.writeInt32LE(id, j * 4));
    chunks.push(history);
    chunks.push(f32Bytes(rec.rgb));
    chunks.push(f32Bytes(rec.depth));
    if (rec.desc) chunks.push(f32Bytes(rec.desc));
  });
  return Buffer.concat(chunks);
}

export function encodeAagc(rows: Float32Array[], names: string[]): Buffer {
  if (rows.length !== names.length) {
    throw new FormatError(`${rows.length} rows but ${names.length} names`);
  }
  if (!rows.length) throw new DataError('class table must not be empty');
  const dTxt = rows[0]!.length;
  const header = Buffer.alloc(14);
  header.write('AAGC', 0, 'ascii');
  header.writeUInt16LE(AAGC_VERSION, 4);
  header.writeUInt32LE(rows.length, 6);
  header.writeUInt32LE(dTxt, 10);
  const chunks: Buffer[] = [header];
  rows.forEach((row, i) => {
    if (row.length !== dTxt) {
      throw new FormatError(`class ${i}: row width ${row.length}, expected ${dTxt}`);
    }
    chunks.push(f32Bytes(row));
  });
  for (const name of names) {
    const encoded = Buffer.from(name, 'utf-8');
    if (encoded.length > 0xffff) {
      throw new FormatError(`class name too long (${encoded.length} bytes)`);
    }
    const len = Buffer.allocUnsafe(2);
    len.writeUInt16LE(encoded.length, 0);
    chunks.push(len, encoded);
  }
  return Buffer.concat(chunks);
}

/** Header-only parse, for tests and manifests; full validation is the
 * consumer's job. */
export function readAagfHeader(raw: Buffer): { meta: DatasetMeta; nSamples: number; hasDesc: boolean } {
  if (raw.length < 48) throw new FormatError(`truncated header, ${raw.length} of 48 bytes`);
  if (raw.subarray(0, 4).toString('ascii') !== 'AAGF') {
    throw new FormatError('bad magic, expected AAGF');
  }
  const version = raw.readUInt16LE(4);
  if (version !== AAGF_VERSION) throw new FormatError(`unsupported AAGF version ${version}`);
  const flags = raw.readUInt16LE(6);
  const code = raw.readUInt8(40);
  const name = (Object.keys(DEPTH_CODES) as DepthSource[])
    .find((k) => DEPTH_CODES[k] === code);
  if (!name) throw new FormatError(`unknown depth_source code ${code}`);
  return {
    meta: {
      dFt: raw.readUInt32LE(16),
      dTxt: raw.readUInt32LE(20),
      nClasses: raw.readUInt32LE(24),
      historyLen: raw.readUInt32LE(28),
      frames: raw.readUInt32LE(32),
      deltaMs: raw.readUInt32LE(36),
      depthSource: name,
    },
    nSamples: Number(raw.readBigUInt64LE(8)),
    hasDesc: (flags & FLAG_DESC) !== 0,
  };
}

/** Write through a temp file in the same directory, then rename. */
export function writeFileAtomic(path: string, data: Buffer | string): void {
  mkdirSync(dirname(path), { recursive: true });
  const tmp = join(dirname(path), `.tmp-${process.pid}-${Date.now()}`);
  writeFileSync(tmp, data);
  renameSync(tmp, path);
}

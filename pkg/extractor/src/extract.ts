/** Dataset construction: annotated frame sequences -> AAGF/AAGC files.
 *
 * For every action segment, the anchor frame sits delta before the
 * segment start (nearest frame at the annotated fps); the record pairs
 * that frame's embeddings with the segment's action as the label and
 * the preceding segments' actions as history. Everything runs in
 * annotation order, single pass, so output bytes depend only on inputs
 * and config.
 */

import { readFileSync } from 'node:fs';
import { dirname, join } from 'node:path';
import { z } from 'zod';

import { Annotations, Video, frameFileName, loadAnnotations } from './annotations.js';
import { TextBackbone, VisualBackbone, textBackbone, visualBackbone } from './backbones.js';
import { encodeDepth } from './depth.js';
import { ConfigError, DataError } from './errors.js';
import {
  DatasetMeta,
  EmbeddingRecord,
  encodeAagc,
  encodeAagf,
  writeFileAtomic,
} from './formats.js';
import { decodePpm } from './ppm.js';

export const TOOL_VERSION = 'aag-extractor 0.1.0';

const configSchema = z.object({
  annotations: z.string().min(1),
  out: z.string().min(1),
  delta_ms: z.number().int().nonnegative().default(1000),
  window: z.number().int().positive().default(1),
  history_len: z.number().int().positive().default(3),
  visual_backbone: z.string().default('ref-s'),
  text_backbone: z.string().default('ref-txt-s'),
  depth: z.enum(['estimated', 'absent']).default('estimated'),
}).strict();

export type ExtractionConfig = z.infer<typeof configSchema>;

export function resolveConfig(raw: unknown): ExtractionConfig {
  const result = configSchema.safeParse(raw);
  if (!result.success) {
    const first = result.error.issues[0]!;
    throw new ConfigError(
      `config: ${first.path.join('.') || '(root)'}: ${first.message}`);
  }
  return result.data;
}

export function loadConfig(path: string): ExtractionConfig {
  let raw: unknown;
  try {
    raw = JSON.parse(readFileSync(path, 'utf-8'));
  } catch (e) {
    throw new ConfigError(`${path}: ${(e as Error).message}`);
  }
  return resolveConfig(raw);
}

export interface Skip {
  video: string;
  segment: number;
  reason: string;
}

export interface ExtractionSummary {
  meta: DatasetMeta;
  written: { train: number; val: number };
  skipped: Skip[];
  outputs: string[];
}

/** History of segment k: the actions of the previous `n` segments,
 * most recent last, -1 where the video has not run that long. */
export function historyIds(video: Video, k: number, n: number): Int32Array {
  const out = new Int32Array(n).fill(-1);
  const prior = video.segments.slice(Math.max(0, k - n), k);
  prior.forEach((seg, i) => {
    out[n - prior.length + i] = seg.action;
  });
  return out;
}

export function describeHistory(ids: Int32Array, classes: string[]): string {
  const names: string[] = [];
  for (const id of ids) {
    if (id >= 0) names.push(classes[id]!);
  }
  return names.length ? `prior actions: ${names.join(', ')}` : 'prior actions: none';
}

interface FrameEmbedding {
  rgb: Float32Array;
  depth: Float32Array;
}

class FrameEncoder {
  private cache = new Map<number, FrameEmbedding>();

  constructor(
    private readonly dir: string,
    private readonly visual: VisualBackbone,
    private readonly wantDepth: boolean,
  ) {}

  encode(index: number): FrameEmbedding {
    let hit = this.cache.get(index);
    if (!hit) {
      const path = join(this.dir, frameFileName(index));
      const img = decodePpm(readFileSync(path), path);
      hit = {
        rgb: this.visual.encode(img),
        depth: this.wantDepth
          ? encodeDepth(img, this.visual)
          : new Float32Array(this.visual.width),
      };
      this.cache.set(index, hit);
    }
    return hit;
  }
}

function windowRows(encoder: FrameEncoder, anchor: number, window: number,
                    dFt: number): FrameEmbedding {
  // Chronological rows ending at the anchor; indices clamp at frame 0 so
  // early segments still produce full windows.
  const rgb = new Float32Array(window * dFt);
  const depth = new Float32Array(window * dFt);
  for (let j = 0; j < window; j++) {
    const idx = Math.max(0, anchor - (window - 1) + j);
    const emb = encoder.encode(idx);
    rgb.set(emb.rgb, j * dFt);
    depth.set(emb.depth, j * dFt);
  }
  return { rgb, depth };
}

function extractVideo(video: Video, root: string, ann: Annotations,
                      cfg: ExtractionConfig, visual: VisualBackbone,
                      text: TextBackbone, skipped: Skip[],
                      nextId: () => number): EmbeddingRecord[] {
  const encoder = new FrameEncoder(join(root, video.frames_dir), visual,
                                   cfg.depth === 'estimated');
  const records: EmbeddingRecord[] = [];
  video.segments.forEach((seg, k) => {
    const skip = (reason: string) => {
      skipped.push({ video: video.id, segment: k, reason });
      console.error(`skip ${video.id} segment ${k}: ${reason}`);
    };
    const anchorS = seg.start_s - cfg.delta_ms / 1000;
    const frameIdx = Math.round(anchorS * ann.fps);
    if (frameIdx < 0) {
      skip(`anchor ${anchorS.toFixed(3)}s is before the video start`);
      return;
    }
    if (frameIdx >= video.n_frames) {
      skip(`anchor frame ${frameIdx} is beyond the ${video.n_frames} listed frames`);
      return;
    }
    let rows;
    try {
      rows = windowRows(encoder, frameIdx, cfg.window, visual.width);
    } catch (e) {
      if (e instanceof ConfigError) throw e;
      skip(`unreadable frame: ${(e as Error).message}`);
      return;
    }
    const history = historyIds(video, k, cfg.history_len);
    records.push({
      sampleId: nextId(),
      label: seg.action,
      history,
      rgb: rows.rgb,
      depth: rows.depth,
      desc: text.encode(describeHistory(history, ann.classes)),
    });
  });
  return records;
}

export function buildDataset(cfg: ExtractionConfig): ExtractionSummary {
  const ann = loadAnnotations(cfg.annotations);
  const root = dirname(cfg.annotations);
  const visual = visualBackbone(cfg.visual_backbone);
  const text = textBackbone(cfg.text_backbone);

  const classRows = ann.classes.map((name) => text.encode(name));
  const skipped: Skip[] = [];
  const splits: Record<'train' | 'val', EmbeddingRecord[]> = { train: [], val: [] };
  let counter = 0;
  const nextId = () => counter++;
  for (const video of ann.videos) {
    splits[video.split].push(
      ...extractVideo(video, root, ann, cfg, visual, text, skipped, nextId));
  }
  for (const split of ['train', 'val'] as const) {
    if (!splits[split].length) {
      throw new DataError(`${split} split produced no records`);
    }
  }

  const meta: DatasetMeta = {
    dFt: visual.width,
    dTxt: text.width,
    nClasses: ann.classes.length,
    historyLen: cfg.history_len,
    frames: cfg.window,
    deltaMs: cfg.delta_ms,
    depthSource: cfg.depth,
  };
  const outputs = [
    join(cfg.out, 'train.aagf'),
    join(cfg.out, 'val.aagf'),
    join(cfg.out, 'classes.aagc'),
    join(cfg.out, 'manifest.json'),
  ];
  writeFileAtomic(outputs[0]!, encodeAagf(splits.train, meta));
  writeFileAtomic(outputs[1]!, encodeAagf(splits.val, meta));
  writeFileAtomic(outputs[2]!, encodeAagc(classRows, ann.classes));

  // No timestamps or host paths in the manifest: reruns over identical
  // inputs must be byte-identical, manifest included.
  const manifest = {
    tool: TOOL_VERSION,
    dataset: ann.dataset,
    config: {
      delta_ms: cfg.delta_ms,
      window: cfg.window,
      history_len: cfg.history_len,
      visual_backbone: cfg.visual_backbone,
      text_backbone: cfg.text_backbone,
      depth: cfg.depth,
    },
    backbones: {
      visual: { id: visual.id, width: visual.width },
      text: { id: text.id, width: text.width },
    },
    counts: {
      videos: ann.videos.length,
      segments: ann.videos.reduce((n, v) => n + v.segments.length, 0),
      written_train: splits.train.length,
      written_val: splits.val.length,
      skipped: skipped.length,
    },
    skipped,
  };
  writeFileAtomic(outputs[3]!, JSON.stringify(manifest, null, 2) + '\n');
  return { meta, written: { train: splits.train.length, val: splits.val.length },
           skipped, outputs };
}

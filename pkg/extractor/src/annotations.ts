/** Annotation schema: one JSON file describes a whole dataset.
 *
 * Frames live as `frame_NNNNNN.ppm` under each video's directory,
 * sampled at a fixed fps. Segments are ground-truth action intervals in
 * seconds, listed in temporal order; that order is also the source of
 * the per-sample action history.
 */

import { readFileSync } from 'node:fs';
import { z } from 'zod';

import { DataError } from './errors.js';

const segmentSchema = z.object({
  start_s: z.number().nonnegative(),
  end_s: z.number().positive(),
  action: z.number().int().nonnegative(),
}).strict();

const videoSchema = z.object({
  id: z.string().min(1),
  frames_dir: z.string().min(1),
  n_frames: z.number().int().positive(),
  split: z.enum(['train', 'val']),
  segments: z.array(segmentSchema).min(1),
}).strict();

const annotationsSchema = z.object({
  dataset: z.string().min(1),
  fps: z.number().positive(),
  classes: z.array(z.string().min(1)).min(1),
  videos: z.array(videoSchema).min(1),
}).strict();

export type Segment = z.infer<typeof segmentSchema>;
export type Video = z.infer<typeof videoSchema>;
export type Annotations = z.infer<typeof annotationsSchema>;

export function parseAnnotations(text: string, where = 'annotations'): Annotations {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch (e) {
    throw new DataError(`${where}: not valid JSON: ${(e as Error).message}`);
  }
  const result = annotationsSchema.safeParse(raw);
  if (!result.success) {
    const first = result.error.issues[0]!;
    throw new DataError(
      `${where}: ${first.path.join('.') || '(root)'}: ${first.message}`);
  }
  const ann = result.data;
  for (const video of ann.videos) {
    let prevStart = -Infinity;
    video.segments.forEach((seg, i) => {
      if (seg.end_s <= seg.start_s) {
        throw new DataError(
          `${where}: video ${video.id} segment ${i}: end ${seg.end_s} <= start ${seg.start_s}`);
      }
      if (seg.start_s < prevStart) {
        throw new DataError(
          `${where}: video ${video.id} segment ${i}: segments must be in temporal order`);
      }
      prevStart = seg.start_s;
      if (seg.action >= ann.classes.length) {
        throw new DataError(
          `${where}: video ${video.id} segment ${i}: action ${seg.action} ` +
          `outside [0, ${ann.classes.length})`);
      }
    });
  }
  const ids = new Set(ann.videos.map((v) => v.id));
  if (ids.size !== ann.videos.length) {
    throw new DataError(`${where}: duplicate video ids`);
  }
  return ann;
}

export function loadAnnotations(path: string): Annotations {
  return parseAnnotations(readFileSync(path, 'utf-8'), path);
}

export function frameFileName(index: number): string {
  return `frame_${String(index).padStart(6, '0')}.ppm`;
}

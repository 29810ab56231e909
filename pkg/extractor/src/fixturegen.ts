/** Bundled fixture dataset: two tiny videos, four actions, ten samples.
 *
 * Frames are formula-drawn 16x12 PPMs (gradient background plus a block
 * that moves and recolors per frame), so the checked-in bytes can be
 * regenerated and verified rather than trusted. The first segment of
 * video_a starts too early for the default anticipation offset and is
 * the skip-path fixture; the other ten segments become records.
 */

import { existsSync, mkdirSync } from 'node:fs';
import { dirname, join } from 'node:path';
import { fileURLToPath, pathToFileURL } from 'node:url';

import { Annotations } from './annotations.js';
import { ExtractionConfig } from './extract.js';
import { writeFileAtomic } from './formats.js';
import { Image, encodePpm, makeImage, setPixel } from './ppm.js';

export const FIXTURE_CLASSES = [
  'pick up leg',
  'attach leg',
  'flip table',
  'tighten screw',
];

export const FIXTURE_ANNOTATIONS: Annotations = {
  dataset: 'fixture-assembly',
  fps: 2,
  classes: FIXTURE_CLASSES,
  videos: [
    {
      id: 'video_a',
      frames_dir: 'video_a',
      n_frames: 16,
      split: 'train',
      segments: [
        { start_s: 0.4, end_s: 0.9, action: 0 },
        { start_s: 1.0, end_s: 1.9, action: 1 },
        { start_s: 2.0, end_s: 2.9, action: 2 },
        { start_s: 3.0, end_s: 4.2, action: 3 },
        { start_s: 4.5, end_s: 5.2, action: 0 },
        { start_s: 5.5, end_s: 6.4, action: 2 },
        { start_s: 6.5, end_s: 7.4, action: 1 },
      ],
    },
    {
      id: 'video_b',
      frames_dir: 'video_b',
      n_frames: 12,
      split: 'val',
      segments: [
        { start_s: 1.0, end_s: 1.7, action: 3 },
        { start_s: 2.5, end_s: 3.3, action: 0 },
        { start_s: 3.5, end_s: 4.4, action: 2 },
        { start_s: 5.0, end_s: 5.5, action: 1 },
      ],
    },
  ],
};

const FRAME_W = 16;
const FRAME_H = 12;

export function fixtureFrame(videoIndex: number, frameIndex: number): Image {
  const img = makeImage(FRAME_W, FRAME_H);
  for (let y = 0; y < FRAME_H; y++) {
    const t = Math.floor((200 * y) / (FRAME_H - 1));
    for (let x = 0; x < FRAME_W; x++) {
      setPixel(img, x, y, 20 + t, 230 - t, 60 + 30 * videoIndex);
    }
  }
  // 4x4 block: position tracks the frame, band tracks the video.
  const x0 = (3 * frameIndex) % (FRAME_W - 4);
  const y0 = 2 + 4 * videoIndex;
  for (let y = y0; y < y0 + 4; y++) {
    for (let x = x0; x < x0 + 4; x++) {
      setPixel(img, x, y, 240, (50 + 29 * frameIndex) % 256, 35);
    }
  }
  return img;
}

export function packageRoot(): string {
  let dir = dirname(fileURLToPath(import.meta.url));
  while (!existsSync(join(dir, 'package.json'))) {
    const parent = dirname(dir);
    if (parent === dir) throw new Error('package.json not found above ' + dir);
    dir = parent;
  }
  return dir;
}

export function fixturesDir(): string {
  return join(packageRoot(), 'fixtures');
}

export function fixtureConfig(out: string): ExtractionConfig {
  return {
    annotations: join(fixturesDir(), 'annotations.json'),
    out,
    delta_ms: 1000,
    window: 1,
    history_len: 3,
    visual_backbone: 'ref-s',
    text_backbone: 'ref-txt-s',
    depth: 'estimated',
  };
}

/** Write the fixture dataset; returns the paths written. */
export function generateFixtureDataset(dir: string): string[] {
  const written: string[] = [];
  const annPath = join(dir, 'annotations.json');
  writeFileAtomic(annPath, JSON.stringify(FIXTURE_ANNOTATIONS, null, 2) + '\n');
  written.push(annPath);
  FIXTURE_ANNOTATIONS.videos.forEach((video, vi) => {
    mkdirSync(join(dir, video.frames_dir), { recursive: true });
    for (let f = 0; f < video.n_frames; f++) {
      const path = join(dir, video.frames_dir,
                        `frame_${String(f).padStart(6, '0')}.ppm`);
      writeFileAtomic(path, encodePpm(fixtureFrame(vi, f)));
      written.push(path);
    }
  });
  return written;
}

const entryPoint = process.argv[1];
if (entryPoint && import.meta.url === pathToFileURL(entryPoint).href) {
  const dir = process.argv[2] ?? fixturesDir();
  const written = generateFixtureDataset(dir);
  console.log(`wrote ${written.length} fixture files under ${dir}`);
}

/** Batch driver: every RGB frame in, one mask PNG per frame out. */

import { mkdirSync, readdirSync } from 'node:fs';
import { basename, extname, join } from 'node:path';

import { unionMasks, UnionOptions } from './maskops.js';
import { readRgbPng, writeMaskPng } from './png.js';
import { InstanceSegmenter } from './types.js';

export interface ExportOptions extends UnionOptions {
  /** Called after each frame; handy for progress output. */
  onFrame?: (name: string, dynamicFraction: number) => void;
}

export interface ExportSummary {
  written: string[];
  failures: string[];
}

/**
 * Run the segmenter over every PNG in rgbDir and write masks with the same
 * filename stem into outDir (0 = static, 255 = dynamic). A frame that fails
 * inference still produces an all-zero mask, so downstream consumers keep a
 * complete mask stream; the failure is reported in the summary.
 */
export async function exportMasks(
  rgbDir: string,
  outDir: string,
  segmenter: InstanceSegmenter,
  options: ExportOptions = {}
): Promise<ExportSummary> {
  const frames = readdirSync(rgbDir)
    .filter((name) => extname(name).toLowerCase() === '.png')
    .sort();
  if (frames.length === 0) {
    throw new Error(`no PNG frames found in ${rgbDir}`);
  }
  mkdirSync(outDir, { recursive: true });
  const summary: ExportSummary = { written: [], failures: [] };
  for (const name of frames) {
    const image = readRgbPng(join(rgbDir, name));
    let mask: Uint8Array;
    try {
      const instances = await segmenter.segment(image);
      mask = unionMasks(instances, image.width, image.height, options);
    } catch (err) {
      console.warn(`warning: inference failed for ${name}: ${String(err)}`);
      mask = new Uint8Array(image.width * image.height);
      summary.failures.push(name);
    }
    const outPath = join(outDir, `${basename(name, '.png')}.png`);
    writeMaskPng(outPath, mask, image.width, image.height);
    summary.written.push(outPath);
    if (options.onFrame) {
      let nonzero = 0;
      for (const v of mask) {
        if (v !== 0) nonzero++;
      }
      options.onFrame(name, nonzero / mask.length);
    }
  }
  return summary;
}

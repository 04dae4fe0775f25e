import { execFileSync } from 'node:child_process';
import { mkdirSync, mkdtempSync, writeFileSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';

import { PNG } from 'pngjs';
import { describe, expect, it } from 'vitest';

import { exportMasks } from '../src/export';
import { readMaskPng } from '../src/png';
import { Instance, InstanceSegmenter, RgbImage } from '../src/types';

function writeRgb(path: string, width: number, height: number, shade = 128): void {
  const png = new PNG({ width, height });
  for (let i = 0; i < width * height; i++) {
    png.data[i * 4] = shade;
    png.data[i * 4 + 1] = shade;
    png.data[i * 4 + 2] = shade;
    png.data[i * 4 + 3] = 255;
  }
  writeFileSync(path, PNG.sync.write(png));
}

/** Deterministic stand-in: person blob on the left, chair blob on the right. */
class StubSegmenter implements InstanceSegmenter {
  async segment(image: RgbImage): Promise<Instance[]> {
    const { width, height } = image;
    const person = new Uint8Array(width * height);
    const chair = new Uint8Array(width * height);
    for (let v = 4; v < height - 4; v++) {
      for (let u = 2; u < Math.floor(width / 3); u++) {
        person[v * width + u] = 1;
      }
      for (let u = Math.floor((2 * width) / 3); u < width - 2; u++) {
        chair[v * width + u] = 1;
      }
    }
    return [
      { label: 'person', score: 0.92, mask: person },
      { label: 'chair', score: 0.99, mask: chair },
    ];
  }
}

class FailingSegmenter implements InstanceSegmenter {
  async segment(): Promise<Instance[]> {
    throw new Error('synthetic inference failure');
  }
}

function makeFrames(dir: string, count: number): string[] {
  mkdirSync(dir, { recursive: true });
  const names: string[] = [];
  for (let i = 0; i < count; i++) {
    const name = `1000.${String(i).padStart(6, '0')}.png`;
    writeRgb(join(dir, name), 32, 24);
    names.push(name);
  }
  return names;
}

describe('exportMasks', () => {
  it('writes one mask per frame with matching stems', async () => {
    const root = mkdtempSync(join(tmpdir(), 'export-'));
    const rgb = join(root, 'rgb');
    const out = join(root, 'masks');
    const names = makeFrames(rgb, 3);
    const summary = await exportMasks(rgb, out, new StubSegmenter());
    expect(summary.written.length).toBe(3);
    expect(summary.failures.length).toBe(0);
    for (const name of names) {
      const mask = readMaskPng(join(out, name));
      expect(mask.width).toBe(32);
      expect(mask.height).toBe(24);
      // person blob present...
      expect(mask.mask[10 * 32 + 5]).toBe(255);
      // ...chair blob filtered out by the class allowlist
      expect(mask.mask[10 * 32 + 28]).toBe(0);
      // values are exactly 0 or 255
      for (const v of mask.mask) {
        expect(v === 0 || v === 255).toBe(true);
      }
    }
  });

  it('failed frames produce an all-zero mask and a recorded failure', async () => {
    const root = mkdtempSync(join(tmpdir(), 'exportfail-'));
    const rgb = join(root, 'rgb');
    const out = join(root, 'masks');
    makeFrames(rgb, 2);
    const summary = await exportMasks(rgb, out, new FailingSegmenter());
    expect(summary.failures.length).toBe(2);
    const mask = readMaskPng(summary.written[0]);
    expect(mask.mask.every((v) => v === 0)).toBe(true);
  });

  it('rejects empty input directories', async () => {
    const root = mkdtempSync(join(tmpdir(), 'exportempty-'));
    mkdirSync(join(root, 'rgb'));
    await expect(
      exportMasks(join(root, 'rgb'), join(root, 'out'), new StubSegmenter())
    ).rejects.toThrow(/no PNG frames/);
  });
});

function primaryReaderAvailable(): boolean {
  try {
    execFileSync('python3', ['-c', 'import rgbdyn.tum'], { stdio: 'pipe' });
    return true;
  } catch {
    return false;
  }
}

describe.skipIf(!primaryReaderAvailable())('primary pipeline interoperability', () => {
  it('exported masks parse with the consuming pipeline mask reader', async () => {
    const root = mkdtempSync(join(tmpdir(), 'interop-'));
    const rgb = join(root, 'rgb');
    const out = join(root, 'masks');
    makeFrames(rgb, 1);
    const summary = await exportMasks(rgb, out, new StubSegmenter());
    const script = [
      'import sys, json',
      'import numpy as np',
      'from rgbdyn.tum import read_mask',
      'mask = read_mask(sys.argv[1])',
      'print(json.dumps({"shape": list(mask.shape), "dynamic": int(mask.sum())}))',
    ].join('\n');
    const output = execFileSync('python3', ['-c', script, summary.written[0]], {
      encoding: 'utf8',
    });
    const parsed = JSON.parse(output.trim());
    expect(parsed.shape).toEqual([24, 32]);
    const ours = readMaskPng(summary.written[0]);
    let expected = 0;
    ours.mask.forEach((v) => {
      if (v !== 0) expected++;
    });
    expect(parsed.dynamic).toBe(expected);
    expect(parsed.dynamic).toBeGreaterThan(0);
  });
});

import { existsSync, mkdtempSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';

import { describe, expect, it } from 'vitest';

import { maskAreaFraction, unionMasks } from '../src/maskops';
import { decodeDetections, imageToChwFloat } from '../src/onnx';
import { readRgbPng, writeMaskPng } from '../src/png';

describe('decodeDetections', () => {
  it('decodes roi masks into boxed full-resolution instances', () => {
    const roi = new Float32Array(2 * 2).fill(0.9);
    const raw = {
      boxes: new Float32Array([2, 2, 8, 8]),
      labels: [1],
      scores: new Float32Array([0.95]),
      masks: roi,
      maskHeight: 2,
      maskWidth: 2,
    };
    const out = decodeDetections(raw, 12, 12);
    expect(out.length).toBe(1);
    expect(out[0].label).toBe('person');
    expect(out[0].score).toBeCloseTo(0.95);
    expect(out[0].mask[5 * 12 + 5]).toBe(1);
    expect(out[0].mask[0]).toBe(0);
  });

  it('thresholds full-resolution probability masks directly', () => {
    const probs = new Float32Array(4 * 4);
    probs[5] = 0.8;
    probs[6] = 0.2;
    const raw = {
      boxes: new Float32Array([0, 0, 4, 4]),
      labels: [BigInt(17)],
      scores: new Float32Array([0.9]),
      masks: probs,
      maskHeight: 4,
      maskWidth: 4,
    };
    const out = decodeDetections(raw, 4, 4);
    expect(out[0].label).toBe('cat');
    expect(out[0].mask[5]).toBe(1);
    expect(out[0].mask[6]).toBe(0);
  });

  it('maps unknown ids to synthetic names that the filter drops', () => {
    const raw = {
      boxes: new Float32Array([0, 0, 2, 2]),
      labels: [88],
      scores: new Float32Array([0.9]),
      masks: new Float32Array([1, 1, 1, 1]),
      maskHeight: 2,
      maskWidth: 2,
    };
    const out = decodeDetections(raw, 2, 2);
    expect(out[0].label).toBe('label_88');
    const fused = unionMasks(out, 2, 2);
    expect(maskAreaFraction(fused)).toBe(0);
  });
});

describe('imageToChwFloat', () => {
  it('normalizes and planarizes rgb bytes', () => {
    const image = {
      width: 2,
      height: 1,
      data: new Uint8Array([255, 0, 51, 0, 255, 102]),
    };
    const chw = imageToChwFloat(image);
    expect(chw[0]).toBeCloseTo(1.0); // R plane
    expect(chw[1]).toBeCloseTo(0.0);
    expect(chw[2]).toBeCloseTo(0.0); // G plane
    expect(chw[3]).toBeCloseTo(1.0);
    expect(chw[4]).toBeCloseTo(0.2); // B plane
    expect(chw[5]).toBeCloseTo(0.4);
  });
});

const modelPath = process.env.MASK_EXPORTER_MODEL;
const fixturePath = process.env.MASK_EXPORTER_FIXTURE;
const haveRealAssets =
  !!modelPath && !!fixturePath && existsSync(modelPath) && existsSync(fixturePath);

describe.skipIf(!haveRealAssets)('real model smoke test', () => {
  // needs MASK_EXPORTER_MODEL (torchvision-style .onnx) and
  // MASK_EXPORTER_FIXTURE (an RGB frame with people, e.g. a TUM walking
  // sequence frame); offline build environments cannot fetch either
  it('walking fixture frame yields a plausible person mask', async () => {
    const { OnnxInstanceSegmenter } = await import('../src/onnx');
    const segmenter = await OnnxInstanceSegmenter.load(modelPath!);
    const image = readRgbPng(fixturePath!);
    const instances = await segmenter.segment(image);
    const mask = unionMasks(instances, image.width, image.height);
    const fraction = maskAreaFraction(mask);
    expect(fraction).toBeGreaterThanOrEqual(0.01);
    expect(fraction).toBeLessThanOrEqual(0.6);
    const dir = mkdtempSync(join(tmpdir(), 'realmask-'));
    writeMaskPng(join(dir, 'fixture_mask.png'), mask, image.width, image.height);
  }, 300_000);
});

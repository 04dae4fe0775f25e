/** PNG I/O for RGB frames and 8-bit grayscale mask files. */

import { readFileSync, writeFileSync } from 'node:fs';
import { PNG } from 'pngjs';

import { RgbImage } from './types.js';

export function readRgbPng(path: string): RgbImage {
  const png = PNG.sync.read(readFileSync(path));
  const data = new Uint8Array(png.width * png.height * 3);
  for (let i = 0; i < png.width * png.height; i++) {
    data[i * 3] = png.data[i * 4];
    data[i * 3 + 1] = png.data[i * 4 + 1];
    data[i * 3 + 2] = png.data[i * 4 + 2];
  }
  return { width: png.width, height: png.height, data };
}

/** Write a mask as 8-bit grayscale-valued PNG: 0 static, 255 dynamic. */
export function writeMaskPng(path: string, mask: Uint8Array, width: number, height: number): void {
  if (mask.length !== width * height) {
    throw new Error('mask size does not match dimensions');
  }
  const png = new PNG({ width, height, colorType: 0, inputColorType: 0, bitDepth: 8 });
  png.data = Buffer.from(mask);
  writeFileSync(path, PNG.sync.write(png, { colorType: 0, inputColorType: 0 }));
}

export function readMaskPng(path: string): { width: number; height: number; mask: Uint8Array } {
  const png = PNG.sync.read(readFileSync(path));
  const mask = new Uint8Array(png.width * png.height);
  for (let i = 0; i < mask.length; i++) {
    mask[i] = png.data[i * 4];
  }
  return { width: png.width, height: png.height, mask };
}

/** Combine per-instance masks into one binary dynamic-content mask. */

import { DYNAMIC_CLASSES } from './classes.js';
import { Instance } from './types.js';

export interface UnionOptions {
  scoreThreshold?: number;
  classes?: readonly string[];
}

/**
 * Union of instance masks, restricted to allowed classes and a minimum
 * score. 0 = static, 255 = dynamic, matching the consuming pipeline's
 * mask PNG convention.
 */
export function unionMasks(
  instances: readonly Instance[],
  width: number,
  height: number,
  options: UnionOptions = {}
): Uint8Array {
  const threshold = options.scoreThreshold ?? 0.5;
  const allowed = new Set(options.classes ?? DYNAMIC_CLASSES);
  const out = new Uint8Array(width * height);
  for (const inst of instances) {
    if (inst.score < threshold || !allowed.has(inst.label)) {
      continue;
    }
    if (inst.mask.length !== out.length) {
      throw new Error(
        `instance mask size ${inst.mask.length} does not match image ${width}x${height}`
      );
    }
    for (let i = 0; i < out.length; i++) {
      if (inst.mask[i] !== 0) {
        out[i] = 255;
      }
    }
  }
  return out;
}

/** Fraction of nonzero pixels, for sanity bounds on exported masks. */
export function maskAreaFraction(mask: Uint8Array): number {
  if (mask.length === 0) {
    return 0;
  }
  let count = 0;
  for (let i = 0; i < mask.length; i++) {
    if (mask[i] !== 0) {
      count++;
    }
  }
  return count / mask.length;
}

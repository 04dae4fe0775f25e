import { describe, expect, it } from 'vitest';

import { DYNAMIC_CLASSES, parseClassFilter } from '../src/classes';
import { maskAreaFraction, unionMasks } from '../src/maskops';
import { Instance } from '../src/types';

function instance(label: string, score: number, pixels: number[], size = 16): Instance {
  const mask = new Uint8Array(size);
  for (const p of pixels) {
    mask[p] = 1;
  }
  return { label, score, mask };
}

describe('unionMasks', () => {
  it('unions masks of allowed classes above the score threshold', () => {
    const out = unionMasks(
      [instance('person', 0.9, [0, 1]), instance('dog', 0.8, [1, 2])],
      4,
      4
    );
    expect(Array.from(out.slice(0, 4))).toEqual([255, 255, 255, 0]);
  });

  it('never lets classes outside the allowlist contribute pixels', () => {
    const intruders = ['chair', 'tv', 'book', 'laptop', 'bottle', 'label_99'];
    for (const label of intruders) {
      const out = unionMasks([instance(label, 0.99, [0, 5, 9])], 4, 4);
      expect(maskAreaFraction(out)).toBe(0);
    }
    // mixed: only the allowed instance shows up
    const out = unionMasks(
      [instance('chair', 0.99, [0]), instance('cat', 0.99, [15])],
      4,
      4
    );
    expect(out[0]).toBe(0);
    expect(out[15]).toBe(255);
  });

  it('applies the score threshold', () => {
    const out = unionMasks([instance('person', 0.4, [3])], 4, 4, {
      scoreThreshold: 0.5,
    });
    expect(out[3]).toBe(0);
    const kept = unionMasks([instance('person', 0.5, [3])], 4, 4, {
      scoreThreshold: 0.5,
    });
    expect(kept[3]).toBe(255);
  });

  it('respects a narrowed class filter', () => {
    const out = unionMasks(
      [instance('person', 0.9, [1]), instance('car', 0.9, [2])],
      4,
      4,
      { classes: ['car'] }
    );
    expect(out[1]).toBe(0);
    expect(out[2]).toBe(255);
  });

  it('rejects size mismatches', () => {
    const bad: Instance = { label: 'person', score: 0.9, mask: new Uint8Array(9) };
    expect(() => unionMasks([bad], 4, 4)).toThrow(/size/);
  });

  it('empty input produces an all-zero mask', () => {
    expect(maskAreaFraction(unionMasks([], 8, 8))).toBe(0);
  });
});

describe('parseClassFilter', () => {
  it('defaults to the full dynamic-class list', () => {
    expect(parseClassFilter(undefined)).toEqual([...DYNAMIC_CLASSES]);
  });

  it('accepts a subset', () => {
    expect(parseClassFilter('person, car')).toEqual(['person', 'car']);
  });

  it('rejects classes outside the list', () => {
    expect(() => parseClassFilter('person,sofa')).toThrow(/sofa/);
  });
});

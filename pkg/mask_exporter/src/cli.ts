#!/usr/bin/env node
/** CLI: export masks for a directory of RGB frames. */

import { parseClassFilter } from './classes.js';
import { exportMasks } from './export.js';
import { OnnxInstanceSegmenter } from './onnx.js';

function usage(): never {
  console.error(
    'usage: mask-exporter export --rgb-dir DIR --out-dir DIR --model MODEL.onnx\n' +
      '                            [--score-threshold 0.5] [--classes person,car,...]'
  );
  process.exit(2);
}

function parseArgs(argv: string[]): Map<string, string> {
  const out = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    const value = argv[i + 1];
    if (!key.startsWith('--') || value === undefined) {
      usage();
    }
    out.set(key.slice(2), value);
  }
  return out;
}

export async function main(argv: string[]): Promise<number> {
  if (argv[0] !== 'export') {
    usage();
  }
  const args = parseArgs(argv.slice(1));
  const rgbDir = args.get('rgb-dir');
  const outDir = args.get('out-dir');
  const model = args.get('model');
  if (!rgbDir || !outDir || !model) {
    usage();
  }
  const threshold = Number(args.get('score-threshold') ?? '0.5');
  const classes = parseClassFilter(args.get('classes'));

  let segmenter: OnnxInstanceSegmenter;
  try {
    segmenter = await OnnxInstanceSegmenter.load(model);
  } catch (err) {
    console.error(`error: could not load model ${model}: ${String(err)}`);
    return 1;
  }
  const summary = await exportMasks(rgbDir, outDir, segmenter, {
    scoreThreshold: threshold,
    classes,
    onFrame: (name, fraction) =>
      console.log(`${name}: ${(fraction * 100).toFixed(1)}% dynamic`),
  });
  console.log(
    `wrote ${summary.written.length} masks to ${outDir}` +
      (summary.failures.length ? ` (${summary.failures.length} inference failures)` : '')
  );
  return 0;
}

const invokedDirectly =
  process.argv[1] !== undefined && import.meta.url.endsWith(process.argv[1].split('/').pop()!);
if (invokedDirectly) {
  main(process.argv.slice(2)).then(
    (code) => process.exit(code),
    (err) => {
      console.error(`error: ${String(err)}`);
      process.exit(1);
    }
  );
}

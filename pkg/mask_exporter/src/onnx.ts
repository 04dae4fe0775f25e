/**
 * ONNX backend for torchvision-style instance segmentation models.
 *
 * Expected model signature (a Mask R-CNN detection model exported from
 * torchvision, or anything matching it):
 *
 *   input:  float32 [3, H, W], RGB in [0, 1]
 *   output: boxes  float32 [N, 4]  (x1, y1, x2, y2) in input pixels
 *           labels int64   [N]     COCO-91 class ids
 *           scores float32 [N]
 *           masks  float32 [N, 1, h, w]  per-ROI probabilities
 *
 * ROI masks are pasted into their boxes at full resolution and thresholded
 * at 0.5. Model weights are not bundled; pass the .onnx path explicitly.
 */

import { labelName } from './classes.js';
import { pasteRoiMask } from './roi.js';
import { Instance, InstanceSegmenter, RgbImage } from './types.js';

export interface RawDetections {
  boxes: Float32Array;
  labels: ArrayLike<number | bigint>;
  scores: Float32Array;
  masks: Float32Array;
  maskHeight: number;
  maskWidth: number;
}

/** Pure postprocessing: raw tensor data to full-resolution instances. */
export function decodeDetections(
  raw: RawDetections,
  width: number,
  height: number,
  maskThreshold = 0.5
): Instance[] {
  const n = raw.scores.length;
  const roiSize = raw.maskHeight * raw.maskWidth;
  const out: Instance[] = [];
  for (let i = 0; i < n; i++) {
    const box = Array.from(raw.boxes.slice(i * 4, i * 4 + 4));
    const roi = raw.masks.slice(i * roiSize, (i + 1) * roiSize);
    const mask =
      raw.maskHeight === height && raw.maskWidth === width
        ? thresholdFullMask(roi, maskThreshold)
        : pasteRoiMask(roi, raw.maskWidth, raw.maskHeight, box, width, height, maskThreshold);
    out.push({
      label: labelName(Number(raw.labels[i])),
      score: raw.scores[i],
      mask,
    });
  }
  return out;
}

function thresholdFullMask(probs: Float32Array, threshold: number): Uint8Array {
  const out = new Uint8Array(probs.length);
  for (let i = 0; i < probs.length; i++) {
    out[i] = probs[i] >= threshold ? 1 : 0;
  }
  return out;
}

export function imageToChwFloat(image: RgbImage): Float32Array {
  const { width, height, data } = image;
  const plane = width * height;
  const out = new Float32Array(3 * plane);
  for (let i = 0; i < plane; i++) {
    out[i] = data[i * 3] / 255;
    out[plane + i] = data[i * 3 + 1] / 255;
    out[2 * plane + i] = data[i * 3 + 2] / 255;
  }
  return out;
}

export class OnnxInstanceSegmenter implements InstanceSegmenter {
  private constructor(
    private readonly session: import('onnxruntime-web').InferenceSession,
    private readonly ort: typeof import('onnxruntime-web')
  ) {}

  static async load(modelPath: string): Promise<OnnxInstanceSegmenter> {
    const ort = await import('onnxruntime-web');
    ort.env.wasm.numThreads = 1; // deterministic single-threaded inference
    const session = await ort.InferenceSession.create(modelPath, {
      executionProviders: ['wasm'],
    });
    return new OnnxInstanceSegmenter(session, ort);
  }

  async segment(image: RgbImage): Promise<Instance[]> {
    const input = new this.ort.Tensor(
      'float32',
      imageToChwFloat(image),
      [3, image.height, image.width]
    );
    const feeds: Record<string, import('onnxruntime-web').Tensor> = {
      [this.session.inputNames[0]]: input,
    };
    const results = await this.session.run(feeds);
    const get = (name: string) => {
      const exact = results[name];
      if (exact) {
        return exact;
      }
      const hit = this.session.outputNames.find((n) => n.includes(name));
      if (!hit) {
        throw new Error(`model has no output matching '${name}'`);
      }
      return results[hit];
    };
    const boxes = get('boxes');
    const labels = get('labels');
    const scores = get('scores');
    const masks = get('masks');
    const dims = masks.dims;
    return decodeDetections(
      {
        boxes: boxes.data as Float32Array,
        labels: labels.data as ArrayLike<number | bigint>,
        scores: scores.data as Float32Array,
        masks: masks.data as Float32Array,
        maskHeight: Number(dims[dims.length - 2]),
        maskWidth: Number(dims[dims.length - 1]),
      },
      image.width,
      image.height
    );
  }
}

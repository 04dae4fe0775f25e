/** Paste low-resolution ROI mask probabilities into image-space boxes. */

/**
 * Bilinearly resample an ROI probability grid over a box and threshold it,
 * writing instance pixels into a full-resolution binary mask.
 *
 * The ROI grid is treated as covering the box exactly, sampled at pixel
 * centers (the usual detection-model paste convention).
 */
export function pasteRoiMask(
  roi: Float32Array,
  roiWidth: number,
  roiHeight: number,
  box: readonly number[],
  width: number,
  height: number,
  threshold = 0.5
): Uint8Array {
  if (roi.length !== roiWidth * roiHeight) {
    throw new Error('roi buffer does not match its dimensions');
  }
  const [x1, y1, x2, y2] = box;
  const out = new Uint8Array(width * height);
  const boxW = Math.max(x2 - x1, 1e-6);
  const boxH = Math.max(y2 - y1, 1e-6);
  // rasterize pixels whose centers fall inside the box
  const u0 = Math.max(0, Math.ceil(x1 - 0.5));
  const v0 = Math.max(0, Math.ceil(y1 - 0.5));
  const u1 = Math.min(width - 1, Math.ceil(x2 - 0.5) - 1);
  const v1 = Math.min(height - 1, Math.ceil(y2 - 0.5) - 1);
  for (let v = v0; v <= v1; v++) {
    const gy = ((v + 0.5 - y1) / boxH) * roiHeight - 0.5;
    for (let u = u0; u <= u1; u++) {
      const gx = ((u + 0.5 - x1) / boxW) * roiWidth - 0.5;
      if (sampleBilinear(roi, roiWidth, roiHeight, gx, gy) >= threshold) {
        out[v * width + u] = 1;
      }
    }
  }
  return out;
}

function sampleBilinear(
  grid: Float32Array,
  w: number,
  h: number,
  x: number,
  y: number
): number {
  const cx = Math.min(Math.max(x, 0), w - 1);
  const cy = Math.min(Math.max(y, 0), h - 1);
  const x0 = Math.floor(cx);
  const y0 = Math.floor(cy);
  const x1 = Math.min(x0 + 1, w - 1);
  const y1 = Math.min(y0 + 1, h - 1);
  const fx = cx - x0;
  const fy = cy - y0;
  const a = grid[y0 * w + x0];
  const b = grid[y0 * w + x1];
  const c = grid[y1 * w + x0];
  const d = grid[y1 * w + x1];
  return a * (1 - fx) * (1 - fy) + b * fx * (1 - fy) + c * (1 - fx) * fy + d * fx * fy;
}

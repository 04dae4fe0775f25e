/** Shared data shapes between the model backends and the mask pipeline. */

/** 8-bit RGB image, 3 bytes per pixel, row-major. */
export interface RgbImage {
  width: number;
  height: number;
  data: Uint8Array;
}

/** One detected instance with a full-resolution binary mask. */
export interface Instance {
  label: string;
  score: number;
  /** width*height bytes, nonzero = instance pixel. */
  mask: Uint8Array;
}

/** Anything that can turn an RGB frame into instance masks. */
export interface InstanceSegmenter {
  segment(image: RgbImage): Promise<Instance[]>;
}

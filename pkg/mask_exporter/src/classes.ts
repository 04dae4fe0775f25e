/**
 * Class vocabulary for the exporter.
 *
 * Only the classes below — things that tend to move on their own — may
 * contribute pixels to an exported mask, regardless of what the underlying
 * model detects.
 */

export const DYNAMIC_CLASSES: readonly string[] = [
  'person',
  'bicycle',
  'car',
  'motorcycle',
  'airplane',
  'bus',
  'train',
  'truck',
  'boat',
  'bird',
  'cat',
  'dog',
  'horse',
  'sheep',
  'cow',
  'elephant',
  'bear',
  'zebra',
  'giraffe',
];

/**
 * COCO-91 label ids (the numbering torchvision detection models emit)
 * for every class the exporter may keep. Background is 0.
 */
export const COCO91_LABELS: ReadonlyMap<number, string> = new Map([
  [1, 'person'],
  [2, 'bicycle'],
  [3, 'car'],
  [4, 'motorcycle'],
  [5, 'airplane'],
  [6, 'bus'],
  [7, 'train'],
  [8, 'truck'],
  [9, 'boat'],
  [10, 'traffic light'],
  [11, 'fire hydrant'],
  [13, 'stop sign'],
  [14, 'parking meter'],
  [15, 'bench'],
  [16, 'bird'],
  [17, 'cat'],
  [18, 'dog'],
  [19, 'horse'],
  [20, 'sheep'],
  [21, 'cow'],
  [22, 'elephant'],
  [23, 'bear'],
  [24, 'zebra'],
  [25, 'giraffe'],
  [27, 'backpack'],
  [28, 'umbrella'],
  [31, 'handbag'],
  [32, 'tie'],
  [33, 'suitcase'],
  [44, 'bottle'],
  [47, 'cup'],
  [62, 'chair'],
  [63, 'couch'],
  [64, 'potted plant'],
  [65, 'bed'],
  [67, 'dining table'],
  [70, 'toilet'],
  [72, 'tv'],
  [73, 'laptop'],
  [84, 'book'],
]);

export function labelName(id: number): string {
  return COCO91_LABELS.get(id) ?? `label_${id}`;
}

/** Parse a comma-separated class list, validating against the allowlist. */
export function parseClassFilter(spec: string | undefined): string[] {
  if (!spec) {
    return [...DYNAMIC_CLASSES];
  }
  const requested = spec
    .split(',')
    .map((s) => s.trim().toLowerCase())
    .filter((s) => s.length > 0);
  const unknown = requested.filter((c) => !DYNAMIC_CLASSES.includes(c));
  if (unknown.length > 0) {
    throw new Error(
      `classes outside the supported dynamic-class list: ${unknown.join(', ')}`
    );
  }
  return requested;
}

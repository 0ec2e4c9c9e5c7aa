/** Dice overlap between two label arrays, per class. */

export function diceScore(
  groundTruth: ArrayLike<number>,
  prediction: ArrayLike<number>,
  classId: number,
): number {
  if (groundTruth.length !== prediction.length) {
    throw new Error(`length mismatch: ${groundTruth.length} vs ${prediction.length}`);
  }
  let gtCount = 0;
  let predCount = 0;
  let inter = 0;
  for (let i = 0; i < groundTruth.length; i++) {
    const g = groundTruth[i] === classId;
    const p = prediction[i] === classId;
    if (g) gtCount++;
    if (p) predCount++;
    if (g && p) inter++;
  }
  // absent from both: perfectly segmented by omission
  if (gtCount + predCount === 0) return 1.0;
  return (2 * inter) / (gtCount + predCount);
}

export function diceAllClasses(
  groundTruth: ArrayLike<number>,
  prediction: ArrayLike<number>,
  numClasses: number,
): Record<string, number> {
  const out: Record<string, number> = {};
  for (let c = 0; c < numClasses; c++) {
    out[String(c)] = diceScore(groundTruth, prediction, c);
  }
  return out;
}

export function meanForegroundDice(scores: Record<string, number>): number {
  const keys = Object.keys(scores).filter((k) => k !== "0");
  const used = keys.length > 0 ? keys : Object.keys(scores);
  return used.reduce((s, k) => s + scores[k], 0) / used.length;
}

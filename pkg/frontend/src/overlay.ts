/** Pure pixel-pushing helpers: label masks to RGBA overlays. */

export interface Rgb {
  r: number;
  g: number;
  b: number;
}

/** Distinct, stable class colors; background (0) gets none. */
export function classPalette(numClasses: number): Rgb[] {
  const palette: Rgb[] = [];
  for (let c = 0; c < numClasses; c++) {
    const hue = (c - 1) * (360 / Math.max(1, numClasses - 1)) * 0.83;
    palette.push(c === 0 ? { r: 0, g: 0, b: 0 } : hslToRgb(hue, 0.85, 0.55));
  }
  return palette;
}

export function hslToRgb(h: number, s: number, l: number): Rgb {
  const hh = ((h % 360) + 360) % 360 / 60;
  const c = (1 - Math.abs(2 * l - 1)) * s;
  const x = c * (1 - Math.abs((hh % 2) - 1));
  let rgb: [number, number, number];
  if (hh < 1) rgb = [c, x, 0];
  else if (hh < 2) rgb = [x, c, 0];
  else if (hh < 3) rgb = [0, c, x];
  else if (hh < 4) rgb = [0, x, c];
  else if (hh < 5) rgb = [x, 0, c];
  else rgb = [c, 0, x];
  const m = l - c / 2;
  return {
    r: Math.round((rgb[0] + m) * 255),
    g: Math.round((rgb[1] + m) * 255),
    b: Math.round((rgb[2] + m) * 255),
  };
}

/**
 * Mask overlay pixels: foreground classes tinted at the given opacity,
 * background fully transparent.
 */
export function maskToRgba(
  labels: ArrayLike<number>,
  numClasses: number,
  alpha: number,
): Uint8ClampedArray {
  const palette = classPalette(numClasses);
  const out = new Uint8ClampedArray(labels.length * 4);
  const a = Math.round(Math.max(0, Math.min(1, alpha)) * 255);
  for (let i = 0; i < labels.length; i++) {
    const c = labels[i];
    if (c === 0 || c >= numClasses) continue; // transparent
    const { r, g, b } = palette[c];
    out[i * 4] = r;
    out[i * 4 + 1] = g;
    out[i * 4 + 2] = b;
    out[i * 4 + 3] = a;
  }
  return out;
}

/** Scribble overlay: marked pixels opaque in their class color. */
export function scribblesToRgba(
  marks: ArrayLike<number>,
  numClasses: number,
): Uint8ClampedArray {
  const palette = classPalette(numClasses);
  const out = new Uint8ClampedArray(marks.length * 4);
  for (let i = 0; i < marks.length; i++) {
    const c = marks[i];
    if (c >= numClasses) continue; // sentinel
    const { r, g, b } = c === 0 ? { r: 30, g: 30, b: 30 } : palette[c];
    out[i * 4] = r;
    out[i * 4 + 1] = g;
    out[i * 4 + 2] = b;
    out[i * 4 + 3] = 255;
  }
  return out;
}

/** Grayscale intensities to opaque RGBA (the image layer). */
export function grayToRgba(pixels: ArrayLike<number>): Uint8ClampedArray {
  const out = new Uint8ClampedArray(pixels.length * 4);
  for (let i = 0; i < pixels.length; i++) {
    const v = pixels[i];
    out[i * 4] = v;
    out[i * 4 + 1] = v;
    out[i * 4 + 2] = v;
    out[i * 4 + 3] = 255;
  }
  return out;
}

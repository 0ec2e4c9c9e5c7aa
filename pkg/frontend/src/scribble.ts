/**
 * In-progress scribble layer: strokes painted with a class-labeled brush,
 * stroke-level undo, and rasterization to the wire mask (class id per
 * scribbled pixel, sentinel = numClasses everywhere else).
 */

export type BrushShape = "square" | "round";

export interface Stroke {
  classId: number;
  /** flat pixel indices (row * width + col), deduplicated, insertion order */
  pixels: number[];
}

export class ScribbleLayer {
  readonly width: number;
  readonly height: number;
  readonly numClasses: number;
  readonly sentinel: number;
  private strokes: Stroke[] = [];
  private active: Stroke | null = null;
  private activeSeen: Set<number> | null = null;

  constructor(width: number, height: number, numClasses: number) {
    if (width < 1 || height < 1) throw new Error("empty canvas");
    if (numClasses < 2) throw new Error("need at least 2 classes");
    this.width = width;
    this.height = height;
    this.numClasses = numClasses;
    this.sentinel = numClasses;
  }

  beginStroke(classId: number): void {
    if (classId < 0 || classId >= this.numClasses) {
      throw new Error(`class id ${classId} out of range [0, ${this.numClasses - 1}]`);
    }
    this.active = { classId, pixels: [] };
    this.activeSeen = new Set();
  }

  /** Stamp the brush at (col, row); pixels outside the image are clipped. */
  paint(col: number, row: number, brushSize: number, shape: BrushShape = "square"): void {
    if (!this.active || !this.activeSeen) throw new Error("no active stroke");
    const half = Math.max(0, Math.floor(brushSize / 2));
    const r0 = Math.max(0, Math.round(row) - half);
    const r1 = Math.min(this.height - 1, Math.round(row) + half);
    const c0 = Math.max(0, Math.round(col) - half);
    const c1 = Math.min(this.width - 1, Math.round(col) + half);
    const radius2 = (brushSize / 2) * (brushSize / 2);
    for (let r = r0; r <= r1; r++) {
      for (let c = c0; c <= c1; c++) {
        if (shape === "round") {
          const dr = r - row;
          const dc = c - col;
          if (dr * dr + dc * dc > radius2) continue;
        }
        const idx = r * this.width + c;
        if (!this.activeSeen.has(idx)) {
          this.activeSeen.add(idx);
          this.active.pixels.push(idx);
        }
      }
    }
  }

  endStroke(): void {
    if (this.active && this.active.pixels.length > 0) {
      this.strokes.push(this.active);
    }
    this.active = null;
    this.activeSeen = null;
  }

  /** Remove the most recent completed stroke; no-op when empty. */
  undo(): boolean {
    return this.strokes.pop() !== undefined;
  }

  clear(): void {
    this.strokes = [];
    this.active = null;
    this.activeSeen = null;
  }

  get strokeCount(): number {
    return this.strokes.length;
  }

  get scribbledPixelCount(): number {
    return new Set(this.allStrokes().flatMap((s) => s.pixels)).size;
  }

  allStrokes(): Stroke[] {
    return this.active && this.active.pixels.length > 0
      ? [...this.strokes, this.active]
      : [...this.strokes];
  }

  /**
   * Wire mask: later strokes win where strokes overlap (the user's most
   * recent correction is the one they mean).
   */
  rasterize(): Uint8Array {
    const marks = new Uint8Array(this.width * this.height).fill(this.sentinel);
    for (const stroke of this.allStrokes()) {
      for (const idx of stroke.pixels) marks[idx] = stroke.classId;
    }
    return marks;
  }
}

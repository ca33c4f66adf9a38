// Stroke capture model: polylines in canvas pixels plus the lossless
// mapping to the service's normalized [0,1] coordinates.
//
// The canvas is sized to a power of two (512) on purpose: scaling by 2^k
// only shifts the float exponent, so pixel -> normalized -> pixel
// round-trips are bit-exact, not merely "close".

export interface Point {
  x: number;
  y: number;
}

export type Stroke = Point[];

/** Wire shape of the strokes payload accepted by /v1/generate and /v1/complete. */
export interface WireStrokes {
  strokes: number[][][];
  labels?: number[];
}

export const CANVAS_SIZE = 512;

function clamp(v: number, lo: number, hi: number): number {
  return v < lo ? lo : v > hi ? hi : v;
}

export class StrokeBuffer {
  readonly width: number;
  readonly height: number;
  strokes: Stroke[] = [];
  private current: Stroke | null = null;

  constructor(width: number = CANVAS_SIZE, height: number = CANVAS_SIZE) {
    if (width <= 0 || height <= 0) {
      throw new Error(`canvas must have positive extent, got ${width}x${height}`);
    }
    this.width = width;
    this.height = height;
  }

  /** Pen touches down: starts a new in-progress stroke. */
  penDown(x: number, y: number): void {
    this.current = [this.clip(x, y)];
  }

  /** Pen drags while down; ignored when no stroke is in progress. */
  penMove(x: number, y: number): void {
    if (this.current) this.current.push(this.clip(x, y));
  }

  /**
   * Pen lifts: commits the in-progress stroke.  Single-point taps are
   * dropped — the service requires >= 2 points per stroke.
   */
  penUp(): void {
    if (this.current && this.current.length >= 2) {
      this.strokes.push(this.current);
    }
    this.current = null;
  }

  /** The stroke being drawn right now, for live rendering. */
  get inProgress(): Stroke | null {
    return this.current;
  }

  /** Removes the most recent committed stroke; returns whether one existed. */
  undo(): boolean {
    return this.strokes.pop() !== undefined;
  }

  clear(): void {
    this.strokes = [];
    this.current = null;
  }

  get isEmpty(): boolean {
    return this.strokes.length === 0;
  }

  private clip(x: number, y: number): Point {
    return { x: clamp(x, 0, this.width), y: clamp(y, 0, this.height) };
  }

  /** Committed strokes as normalized [0,1] coordinate triples-of-arrays. */
  toNormalized(): number[][][] {
    return this.strokes.map((stroke) =>
      stroke.map((p) => [p.x / this.width, p.y / this.height]),
    );
  }

  /** Serializes to the exact request payload shape. */
  serialize(): WireStrokes {
    return { strokes: this.toNormalized() };
  }

  /** Rebuilds a buffer from normalized wire data (candidate adoption, tests). */
  static fromNormalized(
    data: number[][][],
    width: number = CANVAS_SIZE,
    height: number = CANVAS_SIZE,
  ): StrokeBuffer {
    const buf = new StrokeBuffer(width, height);
    buf.strokes = data.map((stroke) =>
      stroke.map(([nx, ny]) => {
        if (nx === undefined || ny === undefined) {
          throw new Error("stroke points must be [x, y] pairs");
        }
        return { x: nx * width, y: ny * height };
      }),
    );
    return buf;
  }
}

/**
 * Largest per-coordinate pixel drift after a full serialize -> JSON ->
 * parse -> denormalize round trip.  The capture invariant is < 0.5 px.
 */
export function roundTripDriftPx(buffer: StrokeBuffer): number {
  const wire: WireStrokes = JSON.parse(JSON.stringify(buffer.serialize()));
  const back = StrokeBuffer.fromNormalized(wire.strokes, buffer.width, buffer.height);
  let worst = 0;
  buffer.strokes.forEach((stroke, i) => {
    stroke.forEach((p, j) => {
      const q = back.strokes[i]?.[j];
      if (!q) throw new Error(`round trip lost point ${i}:${j}`);
      worst = Math.max(worst, Math.abs(p.x - q.x), Math.abs(p.y - q.y));
    });
  });
  return worst;
}

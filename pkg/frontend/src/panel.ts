// Candidate panel state machine and the layout-overlay coordinate mapping.
//
// The overlay math deliberately stores scaled center/size values rather
// than derived corner offsets: with a power-of-two canvas, x*W and x back
// via /W are bit-exact, so the overlay provably shows the exact response
// coordinates (corner math is derived only at paint time).

import type { LayoutWire, PartBoxWire, SampleWire } from "./api.js";
import { CANVAS_SIZE } from "./strokes.js";

export interface OverlayBox {
  partId: number;
  cx: number; // box center, canvas px
  cy: number;
  w: number; // box extent, canvas px
  h: number;
}

export interface CssRect {
  left: number;
  top: number;
  width: number;
  height: number;
}

export function overlayBoxes(
  layout: LayoutWire,
  width: number = CANVAS_SIZE,
  height: number = CANVAS_SIZE,
): OverlayBox[] {
  return layout.boxes
    .filter((b) => b.present)
    .map((b) => ({
      partId: b.part_id,
      cx: b.x * width,
      cy: b.y * height,
      w: b.w * width,
      h: b.h * height,
    }));
}

/** Inverse of overlayBoxes for one box; exact for power-of-two canvases. */
export function normalizedBox(
  box: OverlayBox,
  width: number = CANVAS_SIZE,
  height: number = CANVAS_SIZE,
): Pick<PartBoxWire, "x" | "y" | "w" | "h"> {
  return { x: box.cx / width, y: box.cy / height, w: box.w / width, h: box.h / height };
}

/** Corner form used only when painting the rectangle. */
export function toCssRect(box: OverlayBox): CssRect {
  return {
    left: box.cx - box.w / 2,
    top: box.cy - box.h / 2,
    width: box.w,
    height: box.h,
  };
}

export interface Candidate {
  imagePng: string; // base64 PNG payload
  layout: LayoutWire;
  seed: number;
}

export type PanelPhase = "idle" | "pending" | "shown" | "error";

/**
 * Client-local panel state.  Guarantees a single in-flight request and
 * keeps previously shown candidates when a request fails, so an error
 * never destroys work on screen.
 */
export class CandidatePanel {
  phase: PanelPhase = "idle";
  candidates: Candidate[] = [];
  message = "";
  selected: number | null = null;
  adoptedSeed: number | null = null;

  /** Returns false (and changes nothing) when a request is already out. */
  beginRequest(): boolean {
    if (this.phase === "pending") return false;
    this.phase = "pending";
    this.message = "";
    return true;
  }

  resolve(samples: SampleWire[], seed: number): void {
    this.candidates = samples.map((s) => ({
      imagePng: s.image_png,
      layout: s.layout,
      seed,
    }));
    this.selected = null;
    this.phase = "shown";
  }

  fail(message: string): void {
    this.message = message;
    this.phase = this.candidates.length > 0 ? "shown" : "error";
  }

  /** Picks a candidate: records its seed and collapses the panel. */
  adopt(index: number): Candidate {
    const pick = this.candidates[index];
    if (!pick) {
      throw new Error(`candidate index ${index} out of bounds`);
    }
    this.selected = index;
    this.adoptedSeed = pick.seed;
    this.phase = "idle";
    return pick;
  }

  reset(): void {
    this.phase = "idle";
    this.candidates = [];
    this.message = "";
    this.selected = null;
    this.adoptedSeed = null;
  }
}

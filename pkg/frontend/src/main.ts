// Single-page sketchpad: draw strokes, request candidates, adopt one,
// keep drawing.  All state is client-local; the service is stateless.

import { GenerateResponseWire, ServiceClient, ServiceError } from "./api.js";
import { Candidate, CandidatePanel, overlayBoxes, toCssRect } from "./panel.js";
import { CANVAS_SIZE, StrokeBuffer } from "./strokes.js";

const SERVICE_URL =
  new URLSearchParams(location.search).get("service") ?? "http://127.0.0.1:8000";

const client = new ServiceClient(SERVICE_URL);
const buffer = new StrokeBuffer(CANVAS_SIZE, CANVAS_SIZE);
const panel = new CandidatePanel();

let background: HTMLImageElement | null = null; // adopted candidate raster
let adopted = false; // switches follow-up requests to completion mode
let showOverlay = true;
let seedCounter = Math.floor(Math.random() * 1_000_000);

// ---------------------------------------------------------------------------
// DOM scaffold

const root = document.createElement("div");
root.className = "wrapper";
document.body.append(root);

const title = document.createElement("h1");
title.textContent = "Part Sketchpad";
root.append(title);

const banner = document.createElement("div");
banner.className = "banner";
banner.style.display = "none";
root.append(banner);

const stage = document.createElement("div");
stage.className = "stage";
root.append(stage);

const canvas = document.createElement("canvas");
canvas.width = CANVAS_SIZE;
canvas.height = CANVAS_SIZE;
stage.append(canvas);
const ctx = canvas.getContext("2d")!;

const controls = document.createElement("div");
controls.className = "controls";
root.append(controls);

function button(label: string, onClick: () => void): HTMLButtonElement {
  const b = document.createElement("button");
  b.textContent = label;
  b.addEventListener("click", onClick);
  controls.append(b);
  return b;
}

const undoBtn = button("Undo", () => {
  buffer.undo();
  redraw();
});
const clearBtn = button("Clear", () => {
  buffer.clear();
  background = null;
  adopted = false;
  panel.reset();
  renderPanel();
  redraw();
});

const tempLabel = document.createElement("label");
tempLabel.textContent = "temperature";
const tempSlider = document.createElement("input");
tempSlider.type = "range";
tempSlider.min = "0";
tempSlider.max = "1.5";
tempSlider.step = "0.05";
tempSlider.value = "1.0";
const tempValue = document.createElement("span");
tempValue.textContent = tempSlider.value;
tempSlider.addEventListener("input", () => {
  tempValue.textContent = tempSlider.value;
});
tempLabel.append(tempSlider, tempValue);
controls.append(tempLabel);

const generateBtn = button("Generate 4", () => {
  void requestCandidates();
});

const overlayToggle = document.createElement("label");
const overlayBox = document.createElement("input");
overlayBox.type = "checkbox";
overlayBox.checked = showOverlay;
overlayBox.addEventListener("change", () => {
  showOverlay = overlayBox.checked;
  renderPanel();
});
overlayToggle.append(overlayBox, document.createTextNode(" layout overlay"));
controls.append(overlayToggle);

const panelHost = document.createElement("div");
panelHost.className = "candidates";
root.append(panelHost);

// ---------------------------------------------------------------------------
// canvas rendering

function drawPolyline(points: { x: number; y: number }[]): void {
  const [first, ...rest] = points;
  if (!first || rest.length === 0) return;
  ctx.beginPath();
  ctx.moveTo(first.x, first.y);
  for (const p of rest) ctx.lineTo(p.x, p.y);
  ctx.stroke();
}

function redraw(): void {
  ctx.fillStyle = "white";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  if (background) {
    ctx.drawImage(background, 0, 0, canvas.width, canvas.height);
  }
  ctx.lineWidth = 2;
  ctx.lineCap = "round";
  ctx.lineJoin = "round";
  ctx.strokeStyle = "#222";
  for (const s of buffer.strokes) drawPolyline(s);
  if (buffer.inProgress) drawPolyline(buffer.inProgress);
  undoBtn.disabled = buffer.isEmpty;
}

let penIsDown = false;
canvas.addEventListener("pointerdown", (e) => {
  penIsDown = true;
  canvas.setPointerCapture(e.pointerId);
  buffer.penDown(e.offsetX, e.offsetY);
  redraw();
});
canvas.addEventListener("pointermove", (e) => {
  if (!penIsDown) return;
  buffer.penMove(e.offsetX, e.offsetY);
  redraw();
});
canvas.addEventListener("pointerup", () => {
  penIsDown = false;
  buffer.penUp();
  redraw();
});

// ---------------------------------------------------------------------------
// request / adopt loop

function showError(message: string): void {
  banner.textContent = message;
  banner.style.display = "block";
}

function clearError(): void {
  banner.style.display = "none";
}

async function requestCandidates(): Promise<void> {
  if (buffer.isEmpty) {
    showError("draw at least one stroke first");
    return;
  }
  if (!panel.beginRequest()) return; // one request in flight at a time
  clearError();
  generateBtn.disabled = true;
  const seed = seedCounter++;
  const options = {
    seed,
    temperature: Number(tempSlider.value),
    n_samples: 4,
  };
  try {
    // after adopting a candidate the sketch is a partial to be completed
    const response: GenerateResponseWire = adopted
      ? await client.complete(buffer.serialize(), options)
      : await client.generate({ mode: "strokes", strokes: buffer.serialize(), ...options });
    panel.resolve(response.samples, seed);
  } catch (err) {
    const detail =
      err instanceof ServiceError ? err.message : `service unreachable: ${err}`;
    panel.fail(detail);
    showError(detail); // strokes stay untouched
  } finally {
    generateBtn.disabled = false;
    renderPanel();
  }
}

function adoptCandidate(index: number): void {
  const pick: Candidate = panel.adopt(index);
  const img = new Image();
  img.onload = () => {
    background = img;
    adopted = true;
    redraw();
  };
  img.src = `data:image/png;base64,${pick.imagePng}`;
  renderPanel();
}

function renderPanel(): void {
  panelHost.replaceChildren();
  if (panel.phase === "pending") {
    const note = document.createElement("p");
    note.textContent = "generating…";
    panelHost.append(note);
    return;
  }
  if (panel.adoptedSeed !== null && panel.phase === "idle") {
    const note = document.createElement("p");
    note.textContent = `adopted candidate (seed ${panel.adoptedSeed}); keep drawing`;
    panelHost.append(note);
  }
  panel.candidates.forEach((cand, i) => {
    if (panel.phase !== "shown") return;
    const cell = document.createElement("figure");
    cell.className = "candidate";

    const thumbWrap = document.createElement("div");
    thumbWrap.className = "thumb";
    const img = document.createElement("img");
    img.src = `data:image/png;base64,${cand.imagePng}`;
    img.width = 128;
    img.height = 128;
    thumbWrap.append(img);

    if (showOverlay) {
      // overlay boxes are computed in canvas units and scaled via CSS %
      for (const box of overlayBoxes(cand.layout)) {
        const rect = toCssRect(box);
        const div = document.createElement("div");
        div.className = "overlay-box";
        div.style.left = `${(100 * rect.left) / CANVAS_SIZE}%`;
        div.style.top = `${(100 * rect.top) / CANVAS_SIZE}%`;
        div.style.width = `${(100 * rect.width) / CANVAS_SIZE}%`;
        div.style.height = `${(100 * rect.height) / CANVAS_SIZE}%`;
        div.title = `part ${box.partId}`;
        thumbWrap.append(div);
      }
    }

    const pickBtn = document.createElement("button");
    pickBtn.textContent = `Adopt #${i + 1}`;
    pickBtn.addEventListener("click", () => adoptCandidate(i));

    cell.append(thumbWrap, pickBtn);
    panelHost.append(cell);
  });
}

redraw();
void client.health().then(
  (h) => {
    if (h.status !== "ok") showError(`service status: ${h.status}`);
  },
  () => showError(`cannot reach service at ${SERVICE_URL}`),
);

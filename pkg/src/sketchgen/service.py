"""HTTP inference service over trained checkpoints.

Endpoints (JSON in, JSON out; images as inline base64 PNG):

    POST /v1/generate   any mode: strokes | text | complete | house
    POST /v1/complete   sketch completion (mode defaults to "complete")
    POST /v1/house      room layout from a bubble diagram
    GET  /v1/health     {"status": "ok", "modes": [...]}
    GET  /v1/modes      which modes have a checkpoint loaded

Responses are pure functions of (checkpoint, request): every random draw
comes from a generator seeded by the request's ``seed``, so repeating a
request returns byte-identical payloads (apart from the latency field).
Models are loaded once at startup from ``--ckpt-dir`` / ``$DOODLE_CKPT_DIR``
and never mutated, which makes concurrent requests safe.  Semantic problems
(bad geometry, contradictory payloads) are 400s; a mode whose checkpoint is
missing is a 503; structurally malformed JSON is FastAPI's native 422.
"""

from __future__ import annotations

import base64
import io
import os
import time
import warnings
from pathlib import Path
from typing import Literal

import numpy as np
import torch
from fastapi import FastAPI, HTTPException
from PIL import Image
from pydantic import BaseModel, Field

from .checkpoint import CheckpointError, load_bundle
from .house import BubbleDiagram, HouseModel, postprocess, render_layout
from .locator import PartLocator, layout_batch
from .sketch import CoarseLayout, SketchValidationError, VectorSketch
from .sketcher import (IMAGE_SIZE, PartSketcher, complete_sketch,
                       rasterize_batch, text_to_sketch)

MAX_SAMPLES = 16
MODES = ("strokes", "text", "complete", "house")

Mode = Literal["strokes", "text", "complete", "house"]


# ---------------------------------------------------------------------------
# wire schema


class StrokesPayload(BaseModel):
    strokes: list[list[tuple[float, float]]]
    labels: list[int] | None = None

    def to_sketch(self) -> VectorSketch:
        labels = self.labels if self.labels is not None \
            else [0] * len(self.strokes)
        return VectorSketch(
            [np.asarray(s, dtype=np.float64) for s in self.strokes],
            list(labels))


class DiagramPayload(BaseModel):
    rooms: list[int]
    edges: list[tuple[int, int]] = Field(default_factory=list)

    def to_diagram(self) -> BubbleDiagram:
        return BubbleDiagram(rooms=self.rooms,
                             edges={tuple(e) for e in self.edges}).validate()


class GenerateRequest(BaseModel):
    mode: Mode | None = None
    strokes: StrokesPayload | None = None
    text: str | None = None
    diagram: DiagramPayload | None = None
    seed: int = 0
    temperature: float = 1.0
    n_samples: int = 1


def _bad(msg: str):
    return HTTPException(status_code=400, detail=msg)


def _resolve_mode(req: GenerateRequest, forced: Mode | None) -> Mode:
    if forced is not None:
        if req.mode is not None and req.mode != forced:
            raise _bad(f"this endpoint serves mode {forced!r}, "
                       f"got {req.mode!r}")
        return forced
    if req.mode is None:
        raise _bad("mode is required")
    return req.mode


def _check_request(req: GenerateRequest, mode: Mode) -> None:
    if req.temperature < 0:
        raise _bad("temperature must be >= 0")
    if not 1 <= req.n_samples <= MAX_SAMPLES:
        raise _bad(f"n_samples must be in [1, {MAX_SAMPLES}]")
    payloads = {"strokes": req.strokes is not None,
                "text": req.text is not None,
                "house": req.diagram is not None}
    wanted = {"strokes": "strokes", "complete": "strokes",
              "text": "text", "house": "house"}[mode]
    for kind, got in payloads.items():
        if kind == wanted and not got:
            field = "diagram" if kind == "house" else kind
            raise _bad(f"mode {mode!r} needs the {field!r} payload")
        if kind != wanted and got:
            field = "diagram" if kind == "house" else kind
            raise _bad(f"mode {mode!r} does not take a {field!r} payload")


# ---------------------------------------------------------------------------
# encoding helpers


def png_b64(pixels: np.ndarray) -> str:
    """Grayscale [0,1] array -> base64 PNG string."""
    arr = np.clip(np.asarray(pixels, dtype=np.float64), 0.0, 1.0)
    img = Image.fromarray(np.round(arr * 255.0).astype(np.uint8), mode="L")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def layout_json(layout: CoarseLayout) -> dict:
    return {"boxes": [{"part_id": b.part_id, "x": b.x, "y": b.y,
                       "w": b.w, "h": b.h, "present": b.present}
                      for b in layout.boxes]}


# ---------------------------------------------------------------------------
# model registry


class ModelRegistry:
    """The immutable set of models a service process works from."""

    def __init__(self, locator: PartLocator | None = None,
                 sketcher: PartSketcher | None = None,
                 house: HouseModel | None = None):
        self.locator = locator
        self.sketcher = sketcher
        self.house = house
        for model in (locator, sketcher, house):
            if model is not None:
                model.eval()
                model.requires_grad_(False)

    @classmethod
    def from_dir(cls, ckpt_dir: str | os.PathLike | None) -> "ModelRegistry":
        """Merge every readable checkpoint under the directory; the first
        file (in name order) providing a model wins that slot."""
        reg = cls()
        if ckpt_dir is None:
            return reg
        root = Path(ckpt_dir)
        if not root.is_dir():
            warnings.warn(f"checkpoint directory {root} does not exist")
            return reg
        for path in sorted(root.glob("*.ckpt")):
            try:
                bundle = load_bundle(path)
            except (CheckpointError, OSError) as exc:
                warnings.warn(f"skipping unreadable checkpoint {path}: {exc}")
                continue
            reg.locator = reg.locator or bundle.locator
            reg.sketcher = reg.sketcher or bundle.sketcher
            reg.house = reg.house or bundle.house
        return cls(reg.locator, reg.sketcher, reg.house)

    def modes(self) -> list[str]:
        out = []
        if self.locator is not None and self.sketcher is not None:
            out += ["strokes", "text", "complete"]
        if self.house is not None:
            out.append("house")
        return out

    def require(self, mode: Mode) -> None:
        if mode not in self.modes():
            raise HTTPException(
                status_code=503,
                detail=f"no checkpoint loaded for mode {mode!r}")


# ---------------------------------------------------------------------------
# generation per mode


@torch.no_grad()
def _run_strokes(reg: ModelRegistry, sketch: VectorSketch, req: GenerateRequest
                 ) -> list[dict]:
    sketch.validate(reg.locator.cfg.n_parts)
    gen = torch.Generator().manual_seed(req.seed)
    t0 = time.perf_counter()
    layouts = reg.locator.generate_layout(
        sketch, n_samples=req.n_samples, temperature=req.temperature,
        generator=gen)
    dt = next(reg.sketcher.parameters()).dtype
    geom, present = layout_batch(layouts, dtype=dt)
    conditions = [sketch] * req.n_samples
    images = reg.sketcher.generate_image(
        geom, present, conditions,
        i_c=rasterize_batch(conditions, dtype=dt), generator=gen)
    ms = (time.perf_counter() - t0) * 1000.0 / req.n_samples
    return [{"image_png": png_b64(images[i, 0].double().cpu().numpy()),
             "layout": layout_json(layouts[i]),
             "latency_ms": ms}
            for i in range(req.n_samples)]


@torch.no_grad()
def _run_text(reg: ModelRegistry, req: GenerateRequest) -> list[dict]:
    gen = torch.Generator().manual_seed(req.seed)
    samples = []
    for _ in range(req.n_samples):
        t0 = time.perf_counter()
        image, layout = text_to_sketch(
            reg.locator, reg.sketcher, req.text,
            temperature=req.temperature, generator=gen, return_layout=True)
        samples.append({"image_png": png_b64(image.pixels),
                        "layout": layout_json(layout),
                        "latency_ms": (time.perf_counter() - t0) * 1000.0})
    return samples


@torch.no_grad()
def _run_complete(reg: ModelRegistry, sketch: VectorSketch,
                  req: GenerateRequest) -> list[dict]:
    gen = torch.Generator().manual_seed(req.seed)
    samples = []
    for _ in range(req.n_samples):
        t0 = time.perf_counter()
        image, layout = complete_sketch(
            reg.locator, reg.sketcher, sketch,
            temperature=req.temperature, generator=gen, return_layout=True)
        samples.append({"image_png": png_b64(image.pixels),
                        "layout": layout_json(layout),
                        "latency_ms": (time.perf_counter() - t0) * 1000.0})
    return samples


@torch.no_grad()
def _run_house(reg: ModelRegistry, diagram: BubbleDiagram,
               req: GenerateRequest) -> list[dict]:
    gen = torch.Generator().manual_seed(req.seed)
    samples = []
    for _ in range(req.n_samples):
        t0 = time.perf_counter()
        layout = reg.house.generate_rooms(diagram, generator=gen,
                                          temperature=req.temperature)
        plan = postprocess(layout)
        image = render_layout(layout, diagram.rooms, size=IMAGE_SIZE)
        samples.append({
            "image_png": png_b64(image[0].cpu().numpy()),
            "layout": {"boxes": [
                {"part_id": i, "x": float(b[0]), "y": float(b[1]),
                 "w": float(b[2]), "h": float(b[3]), "present": True}
                for i, b in enumerate(layout.boxes)]},
            "rooms": diagram.rooms,
            "polygons": [p.tolist() for p in plan.polygons],
            "floor_plan_svg": plan.to_svg(),
            "latency_ms": (time.perf_counter() - t0) * 1000.0,
        })
    return samples


# ---------------------------------------------------------------------------
# the app


def create_app(ckpt_dir: str | os.PathLike | None = None) -> FastAPI:
    """Build the service around checkpoints from `ckpt_dir`
    (default: $DOODLE_CKPT_DIR)."""
    if ckpt_dir is None:
        ckpt_dir = os.environ.get("DOODLE_CKPT_DIR")
    registry = ModelRegistry.from_dir(ckpt_dir)
    app = FastAPI(title="sketchgen", version="1")
    app.state.registry = registry

    def handle(req: GenerateRequest, forced: Mode | None) -> dict:
        mode = _resolve_mode(req, forced)
        _check_request(req, mode)
        registry.require(mode)
        try:
            if mode == "strokes":
                samples = _run_strokes(registry, req.strokes.to_sketch(), req)
            elif mode == "complete":
                samples = _run_complete(registry, req.strokes.to_sketch(), req)
            elif mode == "text":
                samples = _run_text(registry, req)
            else:
                samples = _run_house(registry, req.diagram.to_diagram(), req)
        except (SketchValidationError, ValueError) as exc:
            raise _bad(str(exc)) from exc
        return {"mode": mode, "seed": req.seed, "samples": samples}

    @app.post("/v1/generate")
    def generate(req: GenerateRequest) -> dict:
        return handle(req, None)

    @app.post("/v1/complete")
    def complete(req: GenerateRequest) -> dict:
        return handle(req, "complete")

    @app.post("/v1/house")
    def house(req: GenerateRequest) -> dict:
        return handle(req, "house")

    @app.get("/v1/health")
    def health() -> dict:
        return {"status": "ok", "modes": registry.modes()}

    @app.get("/v1/modes")
    def modes() -> dict:
        available = registry.modes()
        return {"modes": available,
                "detail": {m: m in available for m in MODES}}

    return app


def serve(ckpt_dir: str | os.PathLike | None = None,
          host: str = "127.0.0.1", port: int = 8000) -> None:
    """Run the service under uvicorn (blocking)."""
    import uvicorn

    uvicorn.run(create_app(ckpt_dir), host=host, port=port)

"""Vector sketch data model: strokes, part boxes, adjacency graphs, rasters.

Coordinates live in normalized canvas units [0, 1] with the origin at the
top-left corner.  Rasters are grayscale, dark strokes on a light background.
All functions here are pure; nothing mutates its inputs.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

UNLABELED = -1

# Smallest box extent kept after annotation extraction; collinear point sets
# would otherwise produce zero-area parts that break mask resizing downstream.
MIN_BOX_EXTENT = 1.0 / 128.0

# Part vocabulary used by the synthetic creature fixture (see fixtures.py).
SYNTH_PARTS = ("body", "head", "eye_left", "eye_right", "beak", "legs")

# Part vocabulary of the Creative Birds annotation scheme, kept as a
# ready-made configuration for loaders of pre-converted real data.
BIRD_PARTS = (
    "initial", "eye", "head", "body", "beak", "legs", "wings", "mouth", "tail",
)


class SketchValidationError(ValueError):
    """Raised when sketch data violates a structural invariant."""


@dataclass
class VectorSketch:
    """Ordered strokes of 2-D points with an optional part label per stroke."""

    strokes: list[np.ndarray]
    labels: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.strokes = [np.asarray(s, dtype=np.float64) for s in self.strokes]
        if not self.labels:
            self.labels = [UNLABELED] * len(self.strokes)

    def validate(self, n_parts: int | None = None) -> "VectorSketch":
        if len(self.labels) != len(self.strokes):
            raise SketchValidationError(
                f"{len(self.strokes)} strokes but {len(self.labels)} labels"
            )
        for i, s in enumerate(self.strokes):
            if s.ndim != 2 or s.shape[1] != 2:
                raise SketchValidationError(f"stroke {i} is not a (k, 2) array")
            if s.shape[0] < 2:
                raise SketchValidationError(f"stroke {i} has fewer than 2 points")
            if not np.all(np.isfinite(s)):
                raise SketchValidationError(f"stroke {i} has non-finite coordinates")
            if s.min() < 0.0 or s.max() > 1.0:
                raise SketchValidationError(f"stroke {i} leaves the unit canvas")
        for i, lab in enumerate(self.labels):
            if lab != UNLABELED and lab < 0:
                raise SketchValidationError(f"stroke {i} has negative label {lab}")
            if n_parts is not None and lab >= n_parts:
                raise SketchValidationError(
                    f"stroke {i} label {lab} out of range for {n_parts} parts"
                )
        return self

    @property
    def n_points(self) -> int:
        return sum(len(s) for s in self.strokes)

    def is_empty(self) -> bool:
        return len(self.strokes) == 0

    def present_parts(self) -> set[int]:
        return {lab for lab in self.labels if lab != UNLABELED}

    def copy(self) -> "VectorSketch":
        return VectorSketch([s.copy() for s in self.strokes], list(self.labels))


@dataclass
class PartBox:
    """Axis-aligned part bounding box in center/size form."""

    part_id: int
    x: float = 0.0
    y: float = 0.0
    w: float = 0.0
    h: float = 0.0
    present: bool = False

    def validate(self) -> "PartBox":
        if self.present:
            if not (0.0 <= self.x <= 1.0 and 0.0 <= self.y <= 1.0):
                raise SketchValidationError(f"part {self.part_id}: center outside canvas")
            if not (0.0 < self.w <= 1.0 and 0.0 < self.h <= 1.0):
                raise SketchValidationError(f"part {self.part_id}: non-positive extent")
            if (self.x - self.w / 2 < -1e-9 or self.x + self.w / 2 > 1 + 1e-9
                    or self.y - self.h / 2 < -1e-9 or self.y + self.h / 2 > 1 + 1e-9):
                raise SketchValidationError(f"part {self.part_id}: box leaves canvas")
        return self

    def bounds(self) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax)."""
        return (self.x - self.w / 2, self.y - self.h / 2,
                self.x + self.w / 2, self.y + self.h / 2)


@dataclass
class CoarseLayout:
    """One PartBox slot per part identity; absent slots carry no geometry."""

    boxes: list[PartBox]

    def __post_init__(self):
        for t, box in enumerate(self.boxes):
            if box.part_id != t:
                raise SketchValidationError(
                    f"slot {t} holds part_id {box.part_id}; slots are canonical"
                )

    def validate(self) -> "CoarseLayout":
        for box in self.boxes:
            box.validate()
        return self

    @property
    def n_parts(self) -> int:
        return len(self.boxes)

    def present_ids(self) -> list[int]:
        return [b.part_id for b in self.boxes if b.present]

    def to_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(P, 4) float array of (x, y, w, h) and a (P,) present mask.

        Absent slots are zeroed so downstream embeddings see no stale geometry.
        """
        geom = np.zeros((len(self.boxes), 4), dtype=np.float64)
        present = np.zeros(len(self.boxes), dtype=bool)
        for t, b in enumerate(self.boxes):
            if b.present:
                geom[t] = (b.x, b.y, b.w, b.h)
                present[t] = True
        return geom, present

    @staticmethod
    def from_arrays(geom: np.ndarray, present: np.ndarray) -> "CoarseLayout":
        boxes = [
            PartBox(t, *(float(v) for v in geom[t]), present=bool(present[t]))
            for t in range(len(present))
        ]
        return CoarseLayout(boxes)


@dataclass
class AdjacencyGraph:
    """Symmetric boolean neighbor structure with an empty diagonal."""

    n: int
    adj: np.ndarray

    def __post_init__(self):
        self.adj = np.asarray(self.adj, dtype=bool)
        if self.adj.shape != (self.n, self.n):
            raise SketchValidationError(f"adjacency shape {self.adj.shape} != ({self.n}, {self.n})")
        if not np.array_equal(self.adj, self.adj.T):
            raise SketchValidationError("adjacency matrix is not symmetric")
        if np.any(np.diag(self.adj)):
            raise SketchValidationError("adjacency diagonal must be empty")

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adj[i])


@dataclass
class RasterImage:
    """H x W grayscale canvas, values in [0, 1], dark ink on light ground."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2:
            raise SketchValidationError("raster must be a 2-D array")
        if not np.all(np.isfinite(self.pixels)):
            raise SketchValidationError("raster has non-finite pixels")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise SketchValidationError("raster pixels outside [0, 1]")

    @property
    def size(self) -> tuple[int, int]:
        return self.pixels.shape

    def ink(self) -> np.ndarray:
        """Ink intensity (1 = full ink, 0 = blank paper)."""
        return 1.0 - self.pixels

    def to_png_bytes(self) -> bytes:
        arr = np.clip(np.rint(self.pixels * 255.0), 0, 255).astype(np.uint8)
        buf = io.BytesIO()
        Image.fromarray(arr, mode="L").save(buf, format="PNG")
        return buf.getvalue()

    def save_png(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_png_bytes())


# ---------------------------------------------------------------------------
# rasterization


def _segment_coverage(ink: np.ndarray, p0: np.ndarray, p1: np.ndarray) -> None:
    """Accumulate anti-aliased coverage of one segment into the ink canvas.

    Coverage falls linearly from 1 at the segment to 0 at 0.75 px away,
    giving a stroke roughly one pixel wide.  Accumulation is max, so
    overlapping strokes do not darken beyond full ink.
    """
    size_y, size_x = ink.shape
    radius = 0.75
    x0 = max(int(math.floor(min(p0[0], p1[0]) - radius)), 0)
    x1 = min(int(math.ceil(max(p0[0], p1[0]) + radius)), size_x - 1)
    y0 = max(int(math.floor(min(p0[1], p1[1]) - radius)), 0)
    y1 = min(int(math.ceil(max(p0[1], p1[1]) + radius)), size_y - 1)
    if x1 < x0 or y1 < y0:
        return
    ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    d = p1 - p0
    seg_len2 = float(d @ d)
    if seg_len2 == 0.0:
        dist = np.hypot(xs - p0[0], ys - p0[1])
    else:
        t = ((xs - p0[0]) * d[0] + (ys - p0[1]) * d[1]) / seg_len2
        t = np.clip(t, 0.0, 1.0)
        dist = np.hypot(xs - (p0[0] + t * d[0]), ys - (p0[1] + t * d[1]))
    cov = np.clip(1.0 - dist / radius, 0.0, 1.0)
    region = ink[y0:y1 + 1, x0:x1 + 1]
    np.maximum(region, cov, out=region)


def rasterize(sketch: VectorSketch, size: int = 128) -> RasterImage:
    """Render a sketch to a size x size grayscale raster.

    Deterministic polyline rendering: normalized coordinates map onto pixel
    centers ([0, 1] -> [0, size-1]), strokes are drawn one pixel wide with
    anti-aliasing, and an empty sketch yields an all-background canvas.
    """
    if size < 16:
        raise SketchValidationError(f"raster size {size} < 16")
    sketch.validate()
    ink = np.zeros((size, size), dtype=np.float64)
    scale = float(size - 1)
    for stroke in sketch.strokes:
        pts = stroke * scale
        for i in range(len(pts) - 1):
            _segment_coverage(ink, pts[i], pts[i + 1])
    return RasterImage(1.0 - ink)


# ---------------------------------------------------------------------------
# annotation-derived layouts and adjacency graphs


def boxes_from_annotations(sketch: VectorSketch, n_parts: int) -> CoarseLayout:
    """Tight per-part bounding boxes from stroke part labels.

    Each part's box is the min/max envelope of every point on strokes
    carrying that label, converted to center/size form.  Parts with no
    strokes come back absent; unlabeled strokes contribute to no part.
    Degenerate extents are inflated to MIN_BOX_EXTENT and the box is kept
    inside the unit square.
    """
    sketch.validate(n_parts)
    boxes = [PartBox(t) for t in range(n_parts)]
    for t in range(n_parts):
        pts = [s for s, lab in zip(sketch.strokes, sketch.labels) if lab == t]
        if not pts:
            continue
        allp = np.concatenate(pts, axis=0)
        xmin, ymin = allp.min(axis=0)
        xmax, ymax = allp.max(axis=0)
        w = max(float(xmax - xmin), MIN_BOX_EXTENT)
        h = max(float(ymax - ymin), MIN_BOX_EXTENT)
        # Keep the (possibly inflated) box inside the canvas.
        cx = min(max(float(xmin + xmax) / 2.0, w / 2.0), 1.0 - w / 2.0)
        cy = min(max(float(ymin + ymax) / 2.0, h / 2.0), 1.0 - h / 2.0)
        boxes[t] = PartBox(t, cx, cy, w, h, present=True)
    return CoarseLayout(boxes).validate()


def boxes_overlap(a: PartBox, b: PartBox) -> bool:
    """Closed-interval intersection test; boundary contact counts."""
    ax0, ay0, ax1, ay1 = a.bounds()
    bx0, by0, bx1, by1 = b.bounds()
    return ax0 <= bx1 and bx0 <= ax1 and ay0 <= by1 and by0 <= ay1


def build_box_adjacency(layout: CoarseLayout) -> AdjacencyGraph:
    """Connect every pair of overlapping present boxes.

    Absent slots stay isolated; the matrix keeps one row per part slot so
    token order downstream stays canonical.
    """
    n = layout.n_parts
    adj = np.zeros((n, n), dtype=bool)
    present = [b for b in layout.boxes if b.present]
    for i, a in enumerate(present):
        for b in present[i + 1:]:
            if boxes_overlap(a, b):
                adj[a.part_id, b.part_id] = True
                adj[b.part_id, a.part_id] = True
    return AdjacencyGraph(n, adj)


def build_stroke_adjacency(stroke_ids: np.ndarray) -> AdjacencyGraph:
    """Chain adjacency over a flattened point sequence.

    Consecutive points sharing a stroke id are linked; strokes never
    connect to each other.
    """
    ids = np.asarray(stroke_ids)
    n = len(ids)
    adj = np.zeros((n, n), dtype=bool)
    for i in range(n - 1):
        if ids[i] == ids[i + 1]:
            adj[i, i + 1] = True
            adj[i + 1, i] = True
    return AdjacencyGraph(n, adj)


def parts_subset(sketch: VectorSketch, parts) -> VectorSketch:
    """Strokes whose part label is in `parts`, labels preserved.

    Used to carve the "already drawn" strokes out of a full sketch, e.g. the
    body strokes that condition layout generation during training.
    """
    wanted = set(parts)
    keep = [i for i, pid in enumerate(sketch.labels) if pid in wanted]
    return VectorSketch([sketch.strokes[i].copy() for i in keep],
                        [sketch.labels[i] for i in keep])


def flatten_strokes(sketch: VectorSketch, max_points: int | None = None
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Flatten strokes to (points (n, 2), stroke_ids (n,)).

    With max_points set, every stroke is subsampled with an even stride
    (endpoints kept) until the total stays under the cap; this keeps the
    condition-token count bounded for the encoders.
    """
    if sketch.is_empty():
        return np.zeros((0, 2), dtype=np.float64), np.zeros(0, dtype=np.int64)
    strokes = sketch.strokes
    if max_points is not None:
        total = sum(len(s) for s in strokes)
        if total > max_points:
            keep_frac = max_points / total
            out = []
            for s in strokes:
                k = max(2, int(math.floor(len(s) * keep_frac)))
                idx = np.unique(np.round(np.linspace(0, len(s) - 1, k)).astype(int))
                out.append(s[idx])
            strokes = out
    pts = np.concatenate(strokes, axis=0)
    ids = np.concatenate([np.full(len(s), i, dtype=np.int64)
                          for i, s in enumerate(strokes)])
    return pts, ids


# ---------------------------------------------------------------------------
# augmentation


def apply_affine(sketch: VectorSketch, rotation_deg: float, scale: float,
                 translation: tuple[float, float]) -> VectorSketch:
    """Rotate/scale about the canvas center, translate, re-clip to [0, 1]."""
    theta = math.radians(rotation_deg)
    rot = np.array([[math.cos(theta), -math.sin(theta)],
                    [math.sin(theta), math.cos(theta)]])
    center = np.array([0.5, 0.5])
    shift = np.asarray(translation, dtype=np.float64)
    strokes = [
        np.clip((s - center) @ rot.T * scale + center + shift, 0.0, 1.0)
        for s in sketch.strokes
    ]
    return VectorSketch(strokes, list(sketch.labels))


def augment_affine(sketch: VectorSketch, seed: int) -> VectorSketch:
    """Small random affine jitter, deterministic per seed.

    Rotation in [-10, 10] degrees, scale in [0.9, 1.1], translation in
    [-0.05, 0.05] per axis.
    """
    rng = np.random.default_rng(seed)
    rotation = rng.uniform(-10.0, 10.0)
    scale = rng.uniform(0.9, 1.1)
    translation = rng.uniform(-0.05, 0.05, size=2)
    return apply_affine(sketch, rotation, scale, (translation[0], translation[1]))


# ---------------------------------------------------------------------------
# newline-delimited JSON dataset files


def sketch_to_record(sketch: VectorSketch) -> dict:
    return {
        "strokes": [s.tolist() for s in sketch.strokes],
        "labels": list(sketch.labels),
    }


def sketch_from_record(record: dict) -> VectorSketch:
    strokes = [np.asarray(s, dtype=np.float64) for s in record["strokes"]]
    labels = [int(v) for v in record.get("labels", [])]
    return VectorSketch(strokes, labels).validate()


def save_sketches(path, sketches: list[VectorSketch]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sk in sketches:
            fh.write(json.dumps(sketch_to_record(sk)) + "\n")


def load_sketches(path) -> list[VectorSketch]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(sketch_from_record(json.loads(line)))
    return out

"""Procedural creature sketches for tests, demos and smoke training.

Real doodle corpora are large downloads; everything in this repo that needs
data can run off these generators instead.  Creatures are built from the
six-part vocabulary in sketch.SYNTH_PARTS (body, head, two eyes, beak,
legs) with four proportion archetypes standing in for object categories.
Every generator is deterministic per seed.
"""

from __future__ import annotations

import math

import numpy as np

from .sketch import (
    SYNTH_PARTS,
    UNLABELED,
    CoarseLayout,
    VectorSketch,
    boxes_from_annotations,
)

N_PARTS = len(SYNTH_PARTS)
N_CATEGORIES = 4
CATEGORY_NAMES = ("round", "long", "tall", "tiny")

# Caption vocabulary for the text-conditioned pipeline.  Index 0 is padding;
# out-of-vocabulary words map to <unk>.
CAPTION_WORDS = (
    "<pad>", "<unk>", "a", "creature", "with", "and", "no",
    "round", "long", "tall", "tiny",
    "body", "head", "eyes", "beak", "legs",
)
WORD_TO_ID = {w: i for i, w in enumerate(CAPTION_WORDS)}
UNK_ID = WORD_TO_ID["<unk>"]
MAX_CAPTION_LEN = 12


def _ellipse(cx, cy, rx, ry, n=24, phase=0.0, jitter=None):
    t = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False) + phase
    t = np.append(t, t[0])  # close the loop
    pts = np.stack([cx + rx * np.cos(t), cy + ry * np.sin(t)], axis=1)
    if jitter is not None:
        pts = pts + jitter.normal(0.0, 0.0025, size=pts.shape)
    return np.clip(pts, 0.0, 1.0)


def _polyline(points, jitter=None):
    pts = np.asarray(points, dtype=np.float64)
    if jitter is not None:
        pts = pts + jitter.normal(0.0, 0.0025, size=pts.shape)
    return np.clip(pts, 0.0, 1.0)


def synth_creature(seed: int, category: int | None = None
                   ) -> tuple[VectorSketch, CoarseLayout, int]:
    """One labeled creature sketch plus its part layout.

    The layout is exactly what boxes_from_annotations extracts from the
    strokes, so annotation-derived supervision round-trips by construction.
    The category controls body proportions; eyes, beak and legs drop out
    at category-dependent rates so presence prediction has signal.
    """
    rng = np.random.default_rng(seed)
    if category is None:
        category = int(rng.integers(0, N_CATEGORIES))
    if not 0 <= category < N_CATEGORIES:
        raise ValueError(f"category {category} out of range")

    # Archetype proportions: (body rx, body ry, head radius, beak len, leg len)
    arch = {
        0: (0.20, 0.17, 0.085, 0.045, 0.10),
        1: (0.26, 0.12, 0.070, 0.095, 0.12),
        2: (0.11, 0.23, 0.075, 0.035, 0.17),
        3: (0.10, 0.08, 0.105, 0.050, 0.05),
    }[category]
    brx, bry, hr, beak_len, leg_len = (
        v * rng.uniform(0.88, 1.12) for v in arch)

    bx = 0.5 + rng.uniform(-0.05, 0.05)
    by = 0.56 + rng.uniform(-0.04, 0.04)
    hx = bx + (brx * 0.85 if category == 1 else 0.0) + rng.uniform(-0.02, 0.02)
    hy = by - bry - hr * 0.55 + rng.uniform(-0.01, 0.01)

    strokes: list[np.ndarray] = []
    labels: list[int] = []

    strokes.append(_ellipse(bx, by, brx, bry, n=28, phase=rng.uniform(0, math.pi), jitter=rng))
    labels.append(0)  # body
    strokes.append(_ellipse(hx, hy, hr, hr, n=20, phase=rng.uniform(0, math.pi), jitter=rng))
    labels.append(1)  # head

    has_eyes = rng.random() > (0.05 if category == 3 else 0.15)
    if has_eyes:
        er = hr * 0.18
        for part, side in ((2, -1.0), (3, 1.0)):
            strokes.append(_ellipse(hx + side * hr * 0.38, hy - hr * 0.12,
                                    er, er, n=10, jitter=rng))
            labels.append(part)

    if rng.random() > 0.12:
        tip_y = hy + rng.uniform(-0.3, 0.3) * hr
        strokes.append(_polyline([
            (hx + hr * 0.92, hy - hr * 0.22),
            (hx + hr * 0.92 + beak_len, tip_y),
            (hx + hr * 0.92, hy + hr * 0.22),
        ], jitter=rng))
        labels.append(4)  # beak

    leg_drop = 0.7 if category == 3 else 0.1
    if rng.random() > leg_drop:
        y0 = by + bry * 0.9
        for side in (-1.0, 1.0):
            lx = bx + side * brx * 0.45
            strokes.append(_polyline([
                (lx, y0), (lx + side * 0.01, y0 + leg_len),
                (lx + side * 0.035, y0 + leg_len),
            ], jitter=rng))
            labels.append(5)  # legs (both strokes share one part)

    sketch = VectorSketch(strokes, labels).validate(N_PARTS)
    layout = boxes_from_annotations(sketch, N_PARTS)
    return sketch, layout, category


def synth_noise(seed: int, n_strokes: int | None = None) -> VectorSketch:
    """Unlabeled random scribbles; the non-creature class for classifiers."""
    rng = np.random.default_rng(seed)
    if n_strokes is None:
        n_strokes = int(rng.integers(3, 7))
    strokes = []
    for _ in range(n_strokes):
        k = int(rng.integers(6, 18))
        start = rng.uniform(0.15, 0.85, size=2)
        steps = rng.normal(0.0, 0.045, size=(k - 1, 2))
        pts = np.clip(start + np.concatenate(
            [np.zeros((1, 2)), np.cumsum(steps, axis=0)]), 0.02, 0.98)
        strokes.append(pts)
    return VectorSketch(strokes, [UNLABELED] * n_strokes).validate()


def creature_caption(category: int, layout: CoarseLayout) -> str:
    """Short templated description, e.g. 'a round creature with beak and legs'."""
    present = set(layout.present_ids())
    extras = []
    if 2 in present or 3 in present:
        extras.append("eyes")
    if 4 in present:
        extras.append("beak")
    if 5 in present:
        extras.append("legs")
    base = f"a {CATEGORY_NAMES[category]} creature"
    if extras:
        return base + " with " + " and ".join(extras)
    return base + " with no legs"


def encode_caption(text: str) -> np.ndarray:
    """Tokenize a caption to a fixed-length id vector (0-padded, OOV -> unk)."""
    ids = [WORD_TO_ID.get(w, UNK_ID) for w in text.lower().split()]
    ids = ids[:MAX_CAPTION_LEN]
    out = np.zeros(MAX_CAPTION_LEN, dtype=np.int64)
    out[:len(ids)] = ids
    return out


def synth_dataset(n: int, seed: int = 0, category: int | None = None
                  ) -> list[tuple[VectorSketch, CoarseLayout, int]]:
    """n creatures with seeds seed, seed+1, ... (deterministic, reorderable)."""
    return [synth_creature(seed + i, category) for i in range(n)]

"""Bubble-diagram-conditioned house layouts on the layout-CVAE backbone.

A bubble diagram (room types + adjacency edges) conditions the same
probabilistic box decoder that places sketch parts: the condition tokens are
room-type embeddings run through the graph-aware encoder with the bubble
edges as adjacency, the decoder queries carry slot + type identity, and every
listed room's presence is forced on.  Post-processing snaps the boxes to a
1/64 wall grid and unifies near-coincident walls into closed axis-aligned
polygons; the compatibility score counts edge disagreements between the
input diagram and the one reconstructed from the generated boxes.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .gat import GatConfig
from .locator import LocatorConfig, PartLocator, layout_batch
from .sketch import SketchValidationError

SNAP = 1.0 / 64.0     # wall grid pitch; also the adjacency-reconstruction gap
GROUPS = ((1, 3), (4, 6), (7, 9), (10, 12), (13, None))


# ---------------------------------------------------------------------------
# domain types


@dataclass
class BubbleDiagram:
    """Room-type ids plus unordered adjacency pairs between room indices."""

    rooms: list[int]
    edges: set[tuple[int, int]] = field(default_factory=set)

    def __post_init__(self):
        self.rooms = [int(r) for r in self.rooms]
        self.edges = {self._norm(e) for e in self.edges}

    @staticmethod
    def _norm(edge) -> tuple[int, int]:
        i, j = int(edge[0]), int(edge[1])
        return (i, j) if i < j else (j, i)

    @property
    def n_rooms(self) -> int:
        return len(self.rooms)

    def validate(self) -> "BubbleDiagram":
        if any(r < 0 for r in self.rooms):
            raise SketchValidationError("room types must be non-negative")
        for i, j in self.edges:
            if i == j:
                raise SketchValidationError(f"self-edge on room {i}")
            if not (0 <= i < self.n_rooms and 0 <= j < self.n_rooms):
                raise SketchValidationError(f"edge ({i}, {j}) out of range")
        return self

    def to_json(self) -> dict:
        return {"rooms": list(self.rooms),
                "edges": sorted([i, j] for i, j in self.edges)}

    @classmethod
    def from_json(cls, data: dict) -> "BubbleDiagram":
        return cls(rooms=list(data["rooms"]),
                   edges={tuple(e) for e in data.get("edges", [])}).validate()


@dataclass
class RoomLayout:
    """One axis-aligned box per room, center/size form in the unit square."""

    boxes: np.ndarray      # (R, 4) float64: x, y, w, h

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)

    @property
    def n_rooms(self) -> int:
        return len(self.boxes)

    def validate(self) -> "RoomLayout":
        if self.n_rooms == 0:
            raise SketchValidationError("layout has no rooms")
        x, y, w, h = self.boxes.T
        if (w <= 0).any() or (h <= 0).any():
            raise SketchValidationError("non-positive room extent")
        if ((x - w / 2 < -1e-9).any() or (x + w / 2 > 1 + 1e-9).any()
                or (y - h / 2 < -1e-9).any() or (y + h / 2 > 1 + 1e-9).any()):
            raise SketchValidationError("room box leaves the canvas")
        return self

    def corners(self) -> np.ndarray:
        """(R, 4) as x0, y0, x1, y1."""
        x, y, w, h = self.boxes.T
        return np.stack([x - w / 2, y - h / 2, x + w / 2, y + h / 2], axis=1)

    @classmethod
    def from_corners(cls, corners: np.ndarray) -> "RoomLayout":
        c = np.asarray(corners, dtype=np.float64).reshape(-1, 4)
        x0, y0, x1, y1 = c.T
        return cls(np.stack([(x0 + x1) / 2, (y0 + y1) / 2,
                             x1 - x0, y1 - y0], axis=1))


@dataclass
class FloorPlan:
    """Closed axis-aligned polygons (one per room) on the snapped wall grid."""

    polygons: list[np.ndarray]    # each (k, 2), first vertex == last

    def validate(self) -> "FloorPlan":
        if not self.polygons:
            raise SketchValidationError("floor plan has no polygons")
        for idx, poly in enumerate(self.polygons):
            if poly.ndim != 2 or poly.shape[1] != 2 or len(poly) < 4:
                raise SketchValidationError(f"polygon {idx} malformed")
            if not np.array_equal(poly[0], poly[-1]):
                raise SketchValidationError(f"polygon {idx} not closed")
            for a, b in zip(poly[:-1], poly[1:]):
                if a[0] != b[0] and a[1] != b[1]:
                    raise SketchValidationError(
                        f"polygon {idx} has a diagonal edge")
        return self

    def to_svg(self, size: int = 256) -> str:
        parts = [f'<svg xmlns="http://www.w3.org/2000/svg" '
                 f'viewBox="0 0 {size} {size}">']
        for poly in self.polygons:
            pts = " ".join(f"{x * size:.2f},{y * size:.2f}" for x, y in poly[:-1])
            parts.append(f'<polygon points="{pts}" fill="none" '
                         f'stroke="black" stroke-width="2"/>')
        parts.append("</svg>")
        return "\n".join(parts)


# ---------------------------------------------------------------------------
# floor-plan post-processing


def _unify_axis(values: np.ndarray) -> np.ndarray:
    """Single-linkage clustering: walls closer than the grid pitch merge,
    and each cluster lands on the grid point nearest its mean."""
    order = np.argsort(values, kind="stable")
    out = np.empty_like(values)
    cluster: list[int] = []

    def flush():
        mean = values[cluster].mean()
        out[cluster] = np.round(mean / SNAP) * SNAP
        cluster.clear()

    prev = None
    for idx in order:
        if prev is not None and values[idx] - prev >= SNAP:
            flush()
        cluster.append(idx)
        prev = values[idx]
    flush()
    return out


def postprocess(layout) -> FloorPlan:
    """Snap a room layout (or an existing plan) to closed wall polygons.

    Near-coincident parallel walls (< 1/64 apart) unify onto one grid line;
    rooms that collapse to zero area re-expand to a single grid cell.  The
    operation is idempotent: a second pass moves nothing.
    """
    if isinstance(layout, FloorPlan):
        layout = RoomLayout.from_corners(np.stack(
            [[p[:, 0].min(), p[:, 1].min(), p[:, 0].max(), p[:, 1].max()]
             for p in layout.validate().polygons]))
    corners = layout.validate().corners()
    xs = _unify_axis(corners[:, [0, 2]].ravel()).reshape(-1, 2)
    ys = _unify_axis(corners[:, [1, 3]].ravel()).reshape(-1, 2)

    polygons = []
    for (x0, x1), (y0, y1) in zip(xs, ys):
        if x1 - x0 < SNAP:      # degenerate after unification: one grid cell
            x0 = min(x0, 1.0 - SNAP)
            x1 = x0 + SNAP
        if y1 - y0 < SNAP:
            y0 = min(y0, 1.0 - SNAP)
            y1 = y0 + SNAP
        polygons.append(np.array([[x0, y0], [x1, y0], [x1, y1],
                                  [x0, y1], [x0, y0]]))
    return FloorPlan(polygons).validate()


# ---------------------------------------------------------------------------
# diagram reconstruction + compatibility


def _interval_gap(a0, a1, b0, b1) -> float:
    return max(b0 - a1, a0 - b1, 0.0)


def layout_to_bubble(layout: RoomLayout, room_types=None) -> BubbleDiagram:
    """Reconstruct adjacency: rooms are neighbors when their boxes come
    within one grid cell along an axis while their spans overlap (with
    positive length) on the other axis."""
    corners = layout.corners()
    n = len(corners)
    rooms = list(room_types) if room_types is not None else [0] * n
    if len(rooms) != n:
        raise ValueError(f"{len(rooms)} room types for {n} boxes")
    edges = set()
    for i in range(n):
        x0a, y0a, x1a, y1a = corners[i]
        for j in range(i + 1, n):
            x0b, y0b, x1b, y1b = corners[j]
            gap_x = _interval_gap(x0a, x1a, x0b, x1b)
            gap_y = _interval_gap(y0a, y1a, y0b, y1b)
            overlap_x = min(x1a, x1b) - max(x0a, x0b)
            overlap_y = min(y1a, y1b) - max(y0a, y0b)
            if (gap_x <= SNAP and overlap_y > 0) or \
                    (gap_y <= SNAP and overlap_x > 0):
                edges.add((i, j))
    return BubbleDiagram(rooms=rooms, edges=edges).validate()


def compatibility(input_bd: BubbleDiagram, output_bd: BubbleDiagram) -> int:
    """Edge-set symmetric difference under the fixed room correspondence."""
    if input_bd.rooms != output_bd.rooms:
        raise ValueError("diagrams must agree on room count and types")
    return len(input_bd.edges ^ output_bd.edges)


# ---------------------------------------------------------------------------
# synthetic houses (nested splits => realized adjacency matches the diagram)


def random_layout(n_rooms: int, rng: np.random.Generator) -> RoomLayout:
    """Uniformly random valid boxes — the no-skill baseline for compatibility."""
    w = rng.uniform(SNAP, 0.5, size=n_rooms)
    h = rng.uniform(SNAP, 0.5, size=n_rooms)
    x = rng.uniform(w / 2, 1 - w / 2)
    y = rng.uniform(h / 2, 1 - h / 2)
    return RoomLayout(np.stack([x, y, w, h], axis=1)).validate()


def _split_rect(rect, k, rng):
    """Recursive axis-aligned splits into k rooms, cuts on the wall grid."""
    x0, y0, x1, y1 = rect
    if k == 1:
        return [rect]
    horizontal = (x1 - x0) >= (y1 - y0)
    span = (x1 - x0) if horizontal else (y1 - y0)
    cells = int(round(span / SNAP))
    if cells < k:
        raise ValueError("not enough grid cells to give every room one")
    k_a = k // 2
    frac = k_a / k + rng.uniform(-0.1, 0.1)
    # each side keeps at least one cell per room it still has to place
    cut_cell = int(np.clip(round(frac * cells), k_a, cells - (k - k_a)))
    cut = (x0 if horizontal else y0) + cut_cell * SNAP
    if horizontal:
        a, b = (x0, y0, cut, y1), (cut, y0, x1, y1)
    else:
        a, b = (x0, y0, x1, cut), (x0, cut, x1, y1)
    return _split_rect(a, k_a, rng) + _split_rect(b, k - k_a, rng)


def synth_house(seed: int, n_rooms: int | None = None,
                n_room_types: int = 10) -> tuple[BubbleDiagram, RoomLayout]:
    """A random floor split; its diagram is reconstructed from the boxes, so
    ground-truth layouts score compatibility 0 against their own diagrams."""
    rng = np.random.default_rng(seed)
    if n_rooms is None:
        n_rooms = int(rng.integers(3, 9))
    if n_rooms < 1:
        raise ValueError("a house needs at least one room")
    rects = _split_rect((0.0, 0.0, 1.0, 1.0), n_rooms, rng)
    layout = RoomLayout.from_corners(np.array(rects)).validate()
    types = rng.integers(0, n_room_types, size=n_rooms).tolist()
    return layout_to_bubble(layout, types), layout


def synth_house_dataset(n: int, seed: int = 0, n_rooms: int | None = None
                        ) -> list[tuple[BubbleDiagram, RoomLayout]]:
    return [synth_house(seed + i, n_rooms) for i in range(n)]


# ---------------------------------------------------------------------------
# the generation model


@dataclass
class HouseConfig:
    n_room_types: int = 10
    max_rooms: int = 12
    locator: LocatorConfig = field(default_factory=lambda: LocatorConfig())

    def __post_init__(self):
        if self.n_room_types <= 0 or self.max_rooms <= 0:
            raise ValueError("n_room_types and max_rooms must be positive")


class HouseModel(nn.Module):
    """Room-box generator: typed bubble tokens in, one box per room out."""

    def __init__(self, cfg: HouseConfig):
        super().__init__()
        self.cfg = cfg
        self.locator = PartLocator(
            dataclasses.replace(cfg.locator, n_parts=cfg.max_rooms))
        d = cfg.locator.gat.d_model
        self.type_embed = nn.Embedding(cfg.n_room_types, d)

    def _check(self, diagram: BubbleDiagram) -> None:
        diagram.validate()
        if diagram.n_rooms == 0:
            raise ValueError("empty bubble diagram")
        if diagram.n_rooms > self.cfg.max_rooms:
            raise ValueError(f"{diagram.n_rooms} rooms exceed the model "
                             f"capacity of {self.cfg.max_rooms}")
        if max(diagram.rooms) >= self.cfg.n_room_types:
            raise ValueError("room type id outside the configured vocabulary")

    def condition_tokens(self, diagrams: list[BubbleDiagram]
                         ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Type embeddings over the bubble graph: (embeds, adj, valid)."""
        for d in diagrams:
            self._check(d)
        b = len(diagrams)
        n = max(d.n_rooms for d in diagrams)
        dev = self.type_embed.weight.device
        types = torch.zeros(b, n, dtype=torch.int64, device=dev)
        adj = torch.zeros(b, n, n, dtype=torch.bool, device=dev)
        valid = torch.zeros(b, n, dtype=torch.bool, device=dev)
        for bi, diag in enumerate(diagrams):
            r = diag.n_rooms
            types[bi, :r] = torch.as_tensor(diag.rooms, device=dev)
            valid[bi, :r] = True
            for i, j in diag.edges:
                adj[bi, i, j] = adj[bi, j, i] = True
        return self.type_embed(types), adj, valid

    def room_queries(self, diagrams: list[BubbleDiagram]) -> torch.Tensor:
        """Decoder queries: slot identity plus room type, padding slots bare."""
        b = len(diagrams)
        base = self.locator.part_embed.weight[None].expand(
            b, self.cfg.max_rooms, -1).clone()
        for bi, diag in enumerate(diagrams):
            idx = torch.arange(diag.n_rooms)
            base[bi, idx] = base[bi, idx] + self.type_embed(
                torch.as_tensor(diag.rooms,
                                device=self.type_embed.weight.device))
        return base

    def targets(self, diagrams: list[BubbleDiagram],
                layouts: list[RoomLayout], dtype=torch.float32
                ) -> tuple[torch.Tensor, torch.Tensor]:
        """(geom, present) padded to max_rooms slots."""
        b = len(diagrams)
        geom = torch.zeros(b, self.cfg.max_rooms, 4, dtype=dtype)
        present = torch.zeros(b, self.cfg.max_rooms, dtype=torch.bool)
        for bi, (diag, lay) in enumerate(zip(diagrams, layouts)):
            if diag.n_rooms != lay.n_rooms:
                raise ValueError("diagram and layout disagree on room count")
            geom[bi, :lay.n_rooms] = torch.as_tensor(lay.boxes, dtype=dtype)
            present[bi, :lay.n_rooms] = True
        return geom, present

    def loss(self, diagrams: list[BubbleDiagram], layouts: list[RoomLayout],
             kl_weight: float = 1.0, generator=None
             ) -> dict[str, torch.Tensor]:
        geom, present = self.targets(
            diagrams, layouts, dtype=self.type_embed.weight.dtype)
        return self.locator.loss(geom, present, self.condition_tokens(diagrams),
                                 kl_weight=kl_weight, generator=generator,
                                 query_embeds=self.room_queries(diagrams))

    @torch.no_grad()
    def generate_rooms(self, diagram: BubbleDiagram,
                       generator: torch.Generator | None = None,
                       temperature: float = 1.0) -> RoomLayout:
        """One box per listed room, presence forced on for all of them."""
        self._check(diagram)
        force = torch.zeros(1, self.cfg.max_rooms, dtype=torch.bool)
        force[0, :diagram.n_rooms] = True
        layouts = self.locator.generate_layout(
            self.condition_tokens([diagram]), n_samples=1,
            temperature=temperature, generator=generator,
            force_present=force, query_embeds=self.room_queries([diagram]))
        geom, _ = layout_batch(layouts, dtype=torch.float64)
        return RoomLayout(geom[0, :diagram.n_rooms].numpy()).validate()


def fit_house(model: HouseModel, dataset, steps: int, lr: float = 1e-3,
              batch_size: int = 8, seed: int = 0, kl_weight: float = 1.0
              ) -> list[dict[str, float]]:
    """Adam over (diagram, layout) pairs with stateless per-step seeding."""
    from .training import step_seed
    if not dataset:
        raise ValueError("dataset is empty")
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    losses = []
    for step in range(steps):
        rng = np.random.default_rng(step_seed(seed, step, 3))
        idx = rng.integers(0, len(dataset), size=batch_size)
        gen = torch.Generator().manual_seed(step_seed(seed, step, 4))
        batch = [dataset[i] for i in idx]
        out = model.loss([d for d, _ in batch], [l for _, l in batch],
                         kl_weight=kl_weight, generator=gen)
        opt.zero_grad()
        out["total"].backward()
        opt.step()
        losses.append({"step": step,
                       **{k: float(v.detach()) for k, v in out.items()}})
    model.locator.fitted.fill_(1)
    return losses


# ---------------------------------------------------------------------------
# rendering + grouped evaluation


def render_layout(layout: RoomLayout, room_types, size: int = 64
                  ) -> torch.Tensor:
    """(1, size, size) shaded-box rendering (type sets the fill shade)."""
    canvas = np.ones((size, size), dtype=np.float32)
    corners = layout.corners()
    for (x0, y0, x1, y1), t in zip(corners, room_types):
        c0, r0 = int(np.clip(x0 * size, 0, size - 1)), \
            int(np.clip(y0 * size, 0, size - 1))
        c1, r1 = int(np.clip(np.ceil(x1 * size), 1, size)), \
            int(np.clip(np.ceil(y1 * size), 1, size))
        shade = 0.15 + 0.7 * (t % 8) / 7.0
        canvas[r0:r1, c0:c1] = shade
        canvas[r0, c0:c1] = 0.0       # walls
        canvas[r1 - 1, c0:c1] = 0.0
        canvas[r0:r1, c0] = 0.0
        canvas[r0:r1, c1 - 1] = 0.0
    return torch.from_numpy(canvas)[None]


def room_group(n_rooms: int) -> str:
    for lo, hi in GROUPS:
        if n_rooms >= lo and (hi is None or n_rooms <= hi):
            return f"{lo}+" if hi is None else f"{lo}-{hi}"
    raise ValueError(f"no group for {n_rooms} rooms")


def group_eval(dataset, extractor, model_cfg: HouseConfig | None = None,
               train_steps: int = 200, n_samples: int = 10, seed: int = 0,
               max_diagrams: int | None = None) -> dict[str, dict]:
    """Cross-group generalization: per group, train on the complement and
    report rendered-layout FID plus mean compatibility."""
    from .metrics import embed_images, fid

    cfg = model_cfg or HouseConfig()
    by_group: dict[str, list] = {}
    for diag, lay in dataset:
        by_group.setdefault(room_group(diag.n_rooms), []).append((diag, lay))

    report: dict[str, dict] = {}
    for lo, hi in GROUPS:
        label = f"{lo}+" if hi is None else f"{lo}-{hi}"
        held_out = by_group.get(label, [])
        if not held_out:
            warnings.warn(f"group {label} empty; skipped")
            continue
        train_set = [pair for g, pairs in by_group.items() if g != label
                     for pair in pairs]
        if not train_set:
            warnings.warn(f"group {label} has no complement to train on; "
                          "skipped")
            continue
        torch.manual_seed(seed)
        model = HouseModel(cfg)
        fit_house(model, train_set, steps=train_steps, seed=seed)

        if max_diagrams is not None:
            held_out = held_out[:max_diagrams]
        gen = torch.Generator().manual_seed(seed)
        compats, fake_imgs, real_imgs = [], [], []
        for diag, lay in held_out:
            real_imgs.append(render_layout(lay, diag.rooms))
            for _ in range(n_samples):
                sample = model.generate_rooms(diag, generator=gen)
                compats.append(compatibility(
                    diag, layout_to_bubble(sample, diag.rooms)))
                fake_imgs.append(render_layout(sample, diag.rooms))
        fake_feats = embed_images(extractor, torch.stack(fake_imgs))
        real_feats = embed_images(extractor, torch.stack(real_imgs))
        report[label] = {
            "fid": fid(fake_feats, real_feats) if len(real_imgs) >= 2
            else float("nan"),
            "compatibility": float(np.mean(compats)),
            "count": len(held_out),
        }
    return report

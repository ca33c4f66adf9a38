"""Two-stage training: the layout CVAE (stage PL) then the raster GAN (PS).

Both stages run plain single-threaded Adam over synthetic or user-supplied
``(sketch, layout, category)`` triples.  Determinism is the design center:
model init comes from ``TrainConfig.seed`` and every step draws its batch
indices and noise from a seed derived from ``(seed, step)`` alone, so a run
interrupted by a checkpoint and resumed continues bit-exactly — the loss
curve is indistinguishable from an uninterrupted run.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import torch

from .checkpoint import load_bundle, restore_optimizer, save_bundle
from .gat import MODES, GatConfig
from .locator import LocatorConfig, PartLocator, layout_batch
from .sketch import VectorSketch, parts_subset
from .sketcher import (PartCritics, PartSketcher, SketcherConfig, critic_loss,
                       generator_loss, rasterize_batch)

STAGES = ("PL", "PS")

# strokes assumed already on canvas when a training condition is built:
# the creature bodies double as the "initial strokes" of the interactive flow
CONDITION_PARTS = (0,)


@dataclass
class TrainConfig:
    """Optimization knobs for one stage; architecture lives in the model cfg."""

    stage: str
    steps: int
    batch_size: int = 32
    lr: float = 1e-4
    kl_weight: float = 1.0
    part_weight: float = 10.0
    appearance_weight: float = 10.0
    seed: int = 0
    mode: str = "gat"       # attention ablation switch, forced onto the model

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.steps <= 0 or self.batch_size <= 0:
            raise ValueError("steps and batch_size must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if min(self.kl_weight, self.part_weight, self.appearance_weight) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class TrainResult:
    config: TrainConfig
    losses: list[dict[str, float]] = field(default_factory=list)
    locator: PartLocator | None = None
    sketcher: PartSketcher | None = None
    critics: PartCritics | None = None
    checkpoint_path: str | None = None


def step_seed(seed: int, step: int, stream: int = 0) -> int:
    """Per-step RNG seed that depends only on (seed, step, stream).

    Stateless seeding is what makes resume lossless: step 513 draws the same
    batch and the same noise whether or not the process restarted at 512.
    """
    ss = np.random.SeedSequence([seed, step, stream])
    return int(ss.generate_state(1, np.uint64)[0])


def _check_dataset(dataset, n_parts: int) -> None:
    if not dataset:
        raise ValueError("dataset is empty")
    for sketch, layout, _ in dataset:
        if not isinstance(sketch, VectorSketch):
            raise ValueError("dataset entries must be (sketch, layout, label)")
        if len(layout.boxes) != n_parts:
            raise ValueError(
                f"dataset layouts have {len(layout.boxes)} part slots "
                f"but the model expects {n_parts}")


def _force_mode(cfg, mode: str):
    return dataclasses.replace(cfg, gat=dataclasses.replace(cfg.gat, mode=mode))


def _meta(config: TrainConfig, step: int) -> dict:
    return {"stage": config.stage, "step": step,
            "train_config": dataclasses.asdict(config)}


def train(config: TrainConfig, dataset, *, model_cfg=None,
          locator: PartLocator | None = None,
          checkpoint_path: str | None = None, checkpoint_every: int = 0,
          resume: str | None = None, condition_parts=CONDITION_PARTS,
          log_every: int = 0) -> TrainResult:
    """Run one training stage over `dataset` (list of (sketch, layout, label)).

    `model_cfg` sizes a fresh model (LocatorConfig for PL, SketcherConfig for
    PS); `resume` loads models + optimizer state from a checkpoint instead
    and continues from its recorded step.  For stage PS, `locator` rides
    along into saved bundles so one file can serve the full pipeline.
    """
    if config.stage == "PL":
        return _train_locator(config, dataset, model_cfg, checkpoint_path,
                              checkpoint_every, resume, condition_parts,
                              log_every)
    return _train_sketcher(config, dataset, model_cfg, locator,
                           checkpoint_path, checkpoint_every, resume,
                           condition_parts, log_every)


# ---------------------------------------------------------------------------
# stage PL: layout CVAE


def _train_locator(config, dataset, model_cfg, checkpoint_path,
                   checkpoint_every, resume, condition_parts, log_every
                   ) -> TrainResult:
    torch.manual_seed(config.seed)
    if resume is not None:
        bundle = load_bundle(resume)
        if bundle.locator is None:
            raise ValueError(f"{resume} holds no locator to resume")
        model = bundle.locator
        opt = torch.optim.Adam(model.parameters(), lr=config.lr)
        restore_optimizer(opt, bundle.tensors, "opt.pl.",
                          bundle.optimizer_spec("pl"))
        start = int(bundle.meta.get("step", 0))
    else:
        cfg = _force_mode(model_cfg or LocatorConfig(), config.mode)
        model = PartLocator(cfg)
        opt = torch.optim.Adam(model.parameters(), lr=config.lr)
        start = 0
    _check_dataset(dataset, model.cfg.n_parts)

    geom, present = layout_batch([lay for _, lay, _ in dataset])
    conditions = [parts_subset(sk, condition_parts) for sk, _, _ in dataset]

    losses: list[dict[str, float]] = []
    for step in range(start, config.steps):
        rng = np.random.default_rng(step_seed(config.seed, step, 0))
        idx = torch.from_numpy(
            rng.integers(0, len(dataset), size=config.batch_size))
        gen = torch.Generator().manual_seed(step_seed(config.seed, step, 1))
        out = model.loss(geom[idx], present[idx],
                         [conditions[i] for i in idx.tolist()],
                         kl_weight=config.kl_weight, generator=gen)
        opt.zero_grad()
        out["total"].backward()
        opt.step()
        losses.append({"step": step,
                       **{k: float(v.detach()) for k, v in out.items()}})
        if log_every and (step + 1) % log_every == 0:
            print(f"[pl {step + 1}/{config.steps}] "
                  f"total={losses[-1]['total']:.4f} box={losses[-1]['box']:.4f} "
                  f"kl={losses[-1]['kl']:.4f}")
        if (checkpoint_every and checkpoint_path
                and (step + 1) % checkpoint_every == 0
                and step + 1 < config.steps):
            model.fitted.fill_(1)
            save_bundle(checkpoint_path, locator=model,
                        optimizers={"pl": opt}, meta=_meta(config, step + 1))

    model.fitted.fill_(1)
    if checkpoint_path:
        save_bundle(checkpoint_path, locator=model, optimizers={"pl": opt},
                    meta=_meta(config, config.steps))
    return TrainResult(config=config, losses=losses, locator=model,
                       checkpoint_path=checkpoint_path)


# ---------------------------------------------------------------------------
# stage PS: layout-conditioned raster GAN


def _train_sketcher(config, dataset, model_cfg, locator, checkpoint_path,
                    checkpoint_every, resume, condition_parts, log_every
                    ) -> TrainResult:
    torch.manual_seed(config.seed)
    if resume is not None:
        bundle = load_bundle(resume)
        if bundle.sketcher is None or bundle.critics is None:
            raise ValueError(f"{resume} holds no sketcher+critics to resume")
        model, critics = bundle.sketcher, bundle.critics
        if locator is None:
            locator = bundle.locator
        g_opt = torch.optim.Adam(model.parameters(), lr=config.lr)
        d_opt = torch.optim.Adam(critics.parameters(), lr=config.lr)
        restore_optimizer(g_opt, bundle.tensors, "opt.ps_g.",
                          bundle.optimizer_spec("ps_g"))
        restore_optimizer(d_opt, bundle.tensors, "opt.ps_d.",
                          bundle.optimizer_spec("ps_d"))
        start = int(bundle.meta.get("step", 0))
    else:
        cfg = _force_mode(model_cfg or SketcherConfig(), config.mode)
        model = PartSketcher(cfg)
        critics = PartCritics(cfg)
        g_opt = torch.optim.Adam(model.parameters(), lr=config.lr)
        d_opt = torch.optim.Adam(critics.parameters(), lr=config.lr)
        start = 0
    _check_dataset(dataset, model.cfg.n_parts)

    # ground-truth boxes and rasters feed the critics at training time
    geom, present = layout_batch([lay for _, lay, _ in dataset])
    conditions = [parts_subset(sk, condition_parts) for sk, _, _ in dataset]
    real_images = rasterize_batch([sk for sk, _, _ in dataset])
    cond_images = rasterize_batch(conditions)

    def save(step: int) -> None:
        model.fitted.fill_(1)
        save_bundle(checkpoint_path, locator=locator, sketcher=model,
                    critics=critics,
                    optimizers={"ps_g": g_opt, "ps_d": d_opt},
                    meta=_meta(config, step))

    losses: list[dict[str, float]] = []
    for step in range(start, config.steps):
        rng = np.random.default_rng(step_seed(config.seed, step, 0))
        idx = torch.from_numpy(
            rng.integers(0, len(dataset), size=config.batch_size))
        gen = torch.Generator().manual_seed(step_seed(config.seed, step, 1))
        g_b, p_b = geom[idx], present[idx]
        cond = [conditions[i] for i in idx.tolist()]
        real, i_c = real_images[idx], cond_images[idx]

        # one critic step on detached fakes, then one generator step
        fake = model.generate_image(g_b, p_b, cond, i_c, generator=gen)
        real_scores = critics.discriminate(real, g_b, p_b, i_c, generator=gen)
        fake_scores = critics.discriminate(fake.detach(), g_b, p_b, i_c,
                                           patch_ij=real_scores["patch_ij"])
        d_loss = critic_loss(real_scores, fake_scores, p_b,
                             config.part_weight, config.appearance_weight)
        d_opt.zero_grad()
        d_loss.backward()
        d_opt.step()

        gen_scores = critics.discriminate(fake, g_b, p_b, i_c,
                                          patch_ij=real_scores["patch_ij"])
        g_loss = generator_loss(gen_scores, p_b,
                                config.part_weight, config.appearance_weight)
        g_opt.zero_grad()
        g_loss.backward()
        g_opt.step()

        losses.append({"step": step, "d": float(d_loss.detach()),
                       "g": float(g_loss.detach())})
        if log_every and (step + 1) % log_every == 0:
            print(f"[ps {step + 1}/{config.steps}] "
                  f"d={losses[-1]['d']:.4f} g={losses[-1]['g']:.4f}")
        if (checkpoint_every and checkpoint_path
                and (step + 1) % checkpoint_every == 0
                and step + 1 < config.steps):
            save(step + 1)

    model.fitted.fill_(1)
    if checkpoint_path:
        save(config.steps)
    return TrainResult(config=config, losses=losses, locator=locator,
                       sketcher=model, critics=critics,
                       checkpoint_path=checkpoint_path)

"""Generation metrics — FID, diversity, and class-based scores.

The full-scale metric stack needs a large pretrained sketch classifier; at
desk scale a small convolutional classifier trained on the synthetic corpus
plays that role.  Its penultimate activations are the embedding space for
FID (Fréchet distance between Gaussian fits) and GD (mean pairwise feature
distance); its argmax predictions drive CS (how often the intended category
is recognized) and SDS (entropy of the predicted-category histogram).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from scipy.spatial.distance import pdist
from torch import nn

from .checkpoint import Bundle, load_bundle
from .fixtures import N_CATEGORIES, synth_creature, synth_noise
from .locator import layout_batch
from .sketch import parts_subset
from .sketcher import rasterize_batch
from .training import CONDITION_PARTS, step_seed

NOISE_CLASS = N_CATEGORIES          # extra label for unstructured scribbles
N_CLASSES = N_CATEGORIES + 1
EMBED_SIZE = 64                     # classifier input resolution
COV_JITTER = 1e-6                   # diagonal ridge against singular covariance

# evaluation conditions draw from this seed block, far above the small seeds
# training datasets are built from, so the initial strokes are unseen
EVAL_SEED_BASE = 10_000_000


# ---------------------------------------------------------------------------
# feature extractor


class FeatureExtractor(nn.Module):
    """Four stride-2 conv blocks, a normalized embedding, and a class head.

    The LayerNorm pins the embedding scale so desk-scale Fréchet distances
    stay comparable across retrains of this stand-in network.
    """

    def __init__(self, n_classes: int = N_CLASSES, channels: int = 16,
                 embed_dim: int = 16):
        super().__init__()
        c = channels
        self.n_classes = n_classes
        self.embed_dim = embed_dim
        self.blocks = nn.Sequential(
            nn.Conv2d(1, c, 3, 2, 1), nn.ReLU(),
            nn.Conv2d(c, 2 * c, 3, 2, 1), nn.ReLU(),
            nn.Conv2d(2 * c, 4 * c, 3, 2, 1), nn.ReLU(),
            nn.Conv2d(4 * c, 4 * c, 3, 2, 1), nn.ReLU(),
        )
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.to_embed = nn.Linear(4 * c, embed_dim)
        self.norm = nn.LayerNorm(embed_dim)
        self.head = nn.Linear(embed_dim, n_classes)

    def embed(self, images: torch.Tensor) -> torch.Tensor:
        """(B, 1, H, W) in [0, 1] -> (B, embed_dim) penultimate features.

        Rasters arrive white-on-paper; the net sees ink (1 - pixels) so its
        input is sparse-positive rather than saturated near one.
        """
        h = self.pool(self.blocks(1.0 - images)).flatten(1)
        return self.norm(self.to_embed(h))

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.head(self.embed(images))


def resize_images(images: torch.Tensor, size: int = EMBED_SIZE) -> torch.Tensor:
    if images.shape[-2:] == (size, size):
        return images
    return F.interpolate(images, size=(size, size), mode="bilinear",
                         align_corners=False)


def extractor_training_set(n_per_class: int = 32, seed: int = 0
                           ) -> tuple[torch.Tensor, torch.Tensor]:
    """Labeled 64x64 rasters: every creature category plus a noise class."""
    sketches, labels = [], []
    for cat in range(N_CATEGORIES):
        for i in range(n_per_class):
            sk, _, c = synth_creature(seed + cat * n_per_class + i,
                                      category=cat)
            sketches.append(sk)
            labels.append(c)
    for i in range(n_per_class):
        sketches.append(synth_noise(seed + N_CATEGORIES * n_per_class + i))
        labels.append(NOISE_CLASS)
    images = resize_images(rasterize_batch(sketches))
    return images, torch.tensor(labels, dtype=torch.int64)


def train_extractor(images: torch.Tensor | None = None,
                    labels: torch.Tensor | None = None, steps: int = 300,
                    lr: float = 1e-3, batch_size: int = 64, seed: int = 0,
                    **model_kw) -> FeatureExtractor:
    """Cross-entropy training of the stand-in classifier; returns eval mode."""
    torch.manual_seed(seed)
    if images is None:
        images, labels = extractor_training_set(seed=seed)
    model = FeatureExtractor(**model_kw)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    for step in range(steps):
        rng = np.random.default_rng(step_seed(seed, step, 7))
        idx = torch.from_numpy(rng.integers(0, len(images), size=batch_size))
        loss = F.cross_entropy(model(images[idx]), labels[idx])
        opt.zero_grad()
        loss.backward()
        opt.step()
    return model.eval()


@torch.no_grad()
def embed_images(extractor: FeatureExtractor, images: torch.Tensor,
                 batch_size: int = 64) -> np.ndarray:
    """(N, embed_dim) float64 embeddings, resizing each batch as needed."""
    extractor.eval()
    out = [extractor.embed(resize_images(images[i:i + batch_size]))
           for i in range(0, len(images), batch_size)]
    return torch.cat(out).double().numpy()


@torch.no_grad()
def classify_images(extractor: FeatureExtractor, images: torch.Tensor,
                    batch_size: int = 64) -> np.ndarray:
    """Argmax class ids (N,) int64."""
    extractor.eval()
    out = [extractor(resize_images(images[i:i + batch_size])).argmax(dim=-1)
           for i in range(0, len(images), batch_size)]
    return torch.cat(out).numpy()


# ---------------------------------------------------------------------------
# metric functions


def _feature_matrix(feats, least: int = 2) -> np.ndarray:
    f = np.asarray(feats, dtype=np.float64)
    if f.ndim != 2:
        raise ValueError(f"features must be 2-d (n, dim), got shape {f.shape}")
    if f.shape[0] < least:
        raise ValueError(f"need at least {least} feature rows, got {f.shape[0]}")
    return f


def _psd_sqrt_factor(mat: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition, clamping at zero."""
    w, u = np.linalg.eigh(mat)
    w = np.clip(w, 0.0, None)
    return (u * np.sqrt(w)) @ u.T


def fid(feats_a, feats_b) -> float:
    """Fréchet distance between Gaussian fits of two feature sets.

    ||mu_a - mu_b||^2 + Tr(C_a + C_b - 2 (C_a C_b)^{1/2}), with the cross
    term evaluated through the symmetric form C_b^{1/2} C_a C_b^{1/2} so the
    square root stays PSD; eigenvalues are clamped at zero and both
    covariances get a small diagonal ridge.
    """
    a = _feature_matrix(feats_a)
    b = _feature_matrix(feats_b)
    if a.shape[1] != b.shape[1]:
        raise ValueError(
            f"embedding dims differ: {a.shape[1]} vs {b.shape[1]}")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    eye = np.eye(a.shape[1])
    cov_a = np.atleast_2d(np.cov(a, rowvar=False)) + COV_JITTER * eye
    cov_b = np.atleast_2d(np.cov(b, rowvar=False)) + COV_JITTER * eye

    root_b = _psd_sqrt_factor(cov_b)
    inner = root_b @ cov_a @ root_b
    inner = (inner + inner.T) / 2.0
    cross = np.sqrt(np.clip(np.linalg.eigvalsh(inner), 0.0, None)).sum()

    diff = mu_a - mu_b
    val = diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * cross
    return float(max(val, 0.0))


def generation_diversity(feats) -> float:
    """Mean pairwise Euclidean distance between embeddings."""
    return float(pdist(_feature_matrix(feats)).mean())


def histogram_entropy(labels, n_classes: int) -> float:
    """Shannon entropy (nats) of the empirical label distribution."""
    counts = np.bincount(np.asarray(labels, dtype=np.int64),
                         minlength=n_classes)
    if counts.sum() == 0:
        raise ValueError("no labels to build a histogram from")
    p = counts / counts.sum()
    nz = p[p > 0]
    return float(max(-(nz * np.log(nz)).sum(), 0.0))


def characteristic_score(images: torch.Tensor, extractor: FeatureExtractor,
                         target_class) -> float:
    """Fraction of argmax predictions matching the intended class(es)."""
    preds = classify_images(extractor, images)
    return float(np.mean(preds == np.asarray(target_class)))


def semantic_diversity_score(images: torch.Tensor,
                             extractor: FeatureExtractor) -> float:
    """Entropy (nats) of the predicted-category histogram."""
    preds = classify_images(extractor, images)
    return histogram_entropy(preds, extractor.n_classes)


# ---------------------------------------------------------------------------
# end-to-end evaluation


@dataclass
class MetricReport:
    fid: float
    gd: float
    cs: float
    sds: float
    sample_count: int

    def validate(self) -> "MetricReport":
        if not (math.isfinite(self.fid) and self.fid >= 0):
            raise ValueError(f"fid must be finite and >= 0, got {self.fid}")
        if not (math.isfinite(self.gd) and self.gd >= 0):
            raise ValueError(f"gd must be finite and >= 0, got {self.gd}")
        if not 0.0 <= self.cs <= 1.0:
            raise ValueError(f"cs must lie in [0, 1], got {self.cs}")
        if not (math.isfinite(self.sds) and self.sds >= 0):
            raise ValueError(f"sds must be finite and >= 0, got {self.sds}")
        if self.sample_count < 2:
            raise ValueError("sample_count must be at least 2")
        return self

    def to_dict(self) -> dict:
        return {"fid": self.fid, "gd": self.gd, "cs": self.cs,
                "sds": self.sds, "sample_count": self.sample_count}


def _eval_conditions(n: int, seed: int, offset: int):
    """Unseen creatures (sketch, partial, category) for evaluation batches."""
    creatures = [synth_creature(EVAL_SEED_BASE + seed * 100_000 + offset + i)
                 for i in range(n)]
    partials = [parts_subset(sk, CONDITION_PARTS) for sk, _, _ in creatures]
    cats = [cat for _, _, cat in creatures]
    return creatures, partials, cats


def evaluate(checkpoint, extractor: FeatureExtractor, n_samples: int = 512,
             seed: int = 0, temperature: float = 1.0, batch_size: int = 32,
             resize: int = EMBED_SIZE) -> MetricReport:
    """Sample unseen initial strokes, generate, embed, score all four metrics.

    `checkpoint` is a Bundle or a path to one holding both pipeline stages.
    The report is a pure function of (checkpoint, extractor, n_samples, seed,
    temperature): every stochastic draw is seeded per batch.
    """
    bundle = checkpoint if isinstance(checkpoint, Bundle) \
        else load_bundle(checkpoint)
    if bundle.locator is None or bundle.sketcher is None:
        raise ValueError("evaluation needs a bundle with locator + sketcher")
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2 for FID/GD")
    locator, sketcher = bundle.locator, bundle.sketcher

    gen_feats, preds, targets = [], [], []
    with torch.no_grad():
        for batch_idx, lo in enumerate(range(0, n_samples, batch_size)):
            n = min(batch_size, n_samples - lo)
            _, partials, cats = _eval_conditions(n, seed, lo)
            gen = torch.Generator().manual_seed(step_seed(seed, batch_idx, 11))
            force = torch.zeros(n, locator.cfg.n_parts, dtype=torch.bool)
            force[:, list(CONDITION_PARTS)] = True  # drawn strokes stay
            layouts = locator.generate_layout(
                partials, temperature=temperature, generator=gen,
                force_present=force)
            geom, present = layout_batch(layouts)
            i_c = rasterize_batch(partials)
            images = sketcher.generate_image(geom, present, partials, i_c,
                                             generator=gen)
            small = resize_images(images, resize)
            gen_feats.append(embed_images(extractor, small))
            preds.append(classify_images(extractor, small))
            targets.extend(cats)

    real_creatures, _, _ = _eval_conditions(n_samples, seed, 500_000)
    real_images = resize_images(
        rasterize_batch([sk for sk, _, _ in real_creatures]), resize)
    real_feats = embed_images(extractor, real_images)

    gen_feats = np.concatenate(gen_feats)
    preds = np.concatenate(preds)
    return MetricReport(
        fid=fid(gen_feats, real_feats),
        gd=generation_diversity(gen_feats),
        cs=float(np.mean(preds == np.asarray(targets))),
        sds=histogram_entropy(preds, extractor.n_classes),
        sample_count=n_samples,
    ).validate()

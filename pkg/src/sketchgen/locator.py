"""Part locator: a conditional VAE over coarse part-box layouts.

Given initial strokes (or a caption, or a room program), predicts where
every part of the final sketch should go — as bivariate-GMM distributions
over box centers and sizes plus a presence probability per part.  Encoders
are graph-aware transformers; the latent z makes layout generation
one-to-many.  Sizes are decoded conditioned on sampled locations, so the
box distribution factorizes as p(x,y | c, z) * p(w,h | x,y, c, z).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .fixtures import CAPTION_WORDS, encode_caption
from .gat import GatConfig, GatEncoder, standard_attention
from .gmm import (
    GmmParams,
    diag_gaussian_kl,
    gmm_nll,
    gmm_sample,
    reparam_sample,
    split_gmm,
)
from .sketch import (
    MIN_BOX_EXTENT,
    CoarseLayout,
    VectorSketch,
    build_stroke_adjacency,
    flatten_strokes,
)


@dataclass
class LocatorConfig:
    n_parts: int = 6
    n_components: int = 20        # mixture components per GMM head
    z_dim: int = 128
    n_decoder_layers: int = 3
    vocab_size: int = len(CAPTION_WORDS)
    max_condition_points: int = 48
    presence_threshold: float = 0.5
    temperature: float = 1.0
    gat: GatConfig = field(default_factory=GatConfig)

    def __post_init__(self):
        if self.n_parts <= 0 or self.n_components <= 0 or self.z_dim <= 0:
            raise ValueError("n_parts, n_components and z_dim must be positive")
        if not 0.0 <= self.presence_threshold <= 1.0:
            raise ValueError("presence_threshold outside [0, 1]")


@dataclass
class LatentGaussian:
    """Diagonal Gaussian over the layout latent."""

    mu: torch.Tensor       # (B, z_dim)
    logvar: torch.Tensor   # (B, z_dim)

    @property
    def z_dim(self) -> int:
        return self.mu.shape[-1]

    def sample(self, generator=None, temperature: float = 1.0) -> torch.Tensor:
        return reparam_sample(self.mu, self.logvar, generator, temperature)


@dataclass
class DecoderOutputs:
    location: GmmParams          # per-part bivariate GMM over (x, y)
    size: GmmParams              # per-part bivariate GMM over (w, h)
    presence_logits: torch.Tensor   # (B, P)
    f_xy: torch.Tensor           # (B, P, d)
    f_wh: torch.Tensor           # (B, P, d)


def kl_divergence(q: LatentGaussian, p: LatentGaussian) -> torch.Tensor:
    """Closed-form KL(q || p), summed over latent dims; shape (B,)."""
    if q.z_dim != p.z_dim:
        raise ValueError(f"latent dims differ: {q.z_dim} vs {p.z_dim}")
    return diag_gaussian_kl(q.mu, q.logvar, p.mu, p.logvar)


class ConditionEncoder(nn.Module):
    """Shared condition pathway: strokes, captions or custom token sets.

    Stroke points are linearly embedded and chained per stroke; caption
    words come from a learned vocabulary table and chain left to right.
    Both run through one graph-aware encoder (E_c role).
    """

    def __init__(self, gat_cfg: GatConfig, vocab_size: int, max_points: int):
        super().__init__()
        self.max_points = max_points
        self.point_proj = nn.Linear(2, gat_cfg.d_model)
        self.word_embed = nn.Embedding(vocab_size, gat_cfg.d_model)
        self.encoder = GatEncoder(gat_cfg)

    def strokes(self, sketches: list[VectorSketch]
                ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        if any(sk.is_empty() for sk in sketches):
            raise ValueError("cannot encode an empty condition sketch")
        dt = self.point_proj.weight.dtype
        dev = self.point_proj.weight.device
        flats = [flatten_strokes(sk, self.max_points) for sk in sketches]
        n_max = max(len(p) for p, _ in flats)
        b = len(sketches)
        pts = torch.zeros(b, n_max, 2, dtype=dt, device=dev)
        valid = torch.zeros(b, n_max, dtype=torch.bool, device=dev)
        adj = torch.zeros(b, n_max, n_max, dtype=torch.bool, device=dev)
        for i, (p, ids) in enumerate(flats):
            n = len(p)
            pts[i, :n] = torch.as_tensor(p, dtype=dt)
            valid[i, :n] = True
            adj[i, :n, :n] = torch.as_tensor(build_stroke_adjacency(ids).adj)
        cls_c, tokens = self.encoder(self.point_proj(pts), adj, valid_mask=valid)
        return cls_c, tokens, valid

    def text(self, token_ids: torch.Tensor
             ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        if token_ids.dim() == 1:
            token_ids = token_ids[None]
        valid = token_ids > 0
        if not valid.any(dim=-1).all():
            raise ValueError("cannot encode an empty caption")
        b, n = token_ids.shape
        idx = torch.arange(n - 1, device=token_ids.device)
        adj = torch.zeros(b, n, n, dtype=torch.bool, device=token_ids.device)
        chain = valid[:, :-1] & valid[:, 1:]
        adj[:, idx, idx + 1] = chain
        adj[:, idx + 1, idx] = chain
        cls_c, tokens = self.encoder(self.word_embed(token_ids), adj,
                                     valid_mask=valid)
        return cls_c, tokens, valid

    def tokens(self, embeds: torch.Tensor, adj: torch.Tensor,
               valid: torch.Tensor | None = None):
        cls_c, tokens = self.encoder(embeds, adj, valid_mask=valid)
        if valid is None:
            valid = torch.ones(embeds.shape[:2], dtype=torch.bool,
                               device=embeds.device)
        return cls_c, tokens, valid

    def dispatch(self, condition):
        if isinstance(condition, VectorSketch):
            return self.strokes([condition])
        if isinstance(condition, str):
            ids = torch.as_tensor(encode_caption(condition),
                                  device=self.word_embed.weight.device)
            return self.text(ids[None])
        if isinstance(condition, (list, tuple)):
            if (len(condition) == 3
                    and all(isinstance(c, torch.Tensor) for c in condition)):
                return self.tokens(*condition)
            if all(isinstance(c, VectorSketch) for c in condition):
                return self.strokes(list(condition))
            if all(isinstance(c, str) for c in condition):
                ids = np.stack([encode_caption(c) for c in condition])
                return self.text(torch.as_tensor(
                    ids, device=self.word_embed.weight.device))
        if isinstance(condition, torch.Tensor):
            return self.text(condition)
        raise TypeError(f"unsupported condition type {type(condition)!r}")


class _DecoderLayer(nn.Module):
    """Self-attention over part queries + cross-attention into the condition.

    Query positional encodings (the part embeddings) are re-added at every
    attention input, detection-transformer style.  Post-norm residuals.
    """

    def __init__(self, cfg: GatConfig):
        super().__init__()
        d = cfg.d_model
        self.n_heads, self.d_head = cfg.n_heads, cfg.d_head
        self.self_q = nn.Linear(d, d)
        self.self_k = nn.Linear(d, d)
        self.self_v = nn.Linear(d, d)
        self.self_out = nn.Linear(d, d)
        self.cross_q = nn.Linear(d, d)
        self.cross_k = nn.Linear(d, d)
        self.cross_v = nn.Linear(d, d)
        self.cross_out = nn.Linear(d, d)
        self.ffn = nn.Sequential(
            nn.Linear(d, cfg.ffn_mult * d), nn.ReLU(),
            nn.Linear(cfg.ffn_mult * d, d))
        self.norm_self = nn.LayerNorm(d)
        self.norm_cross = nn.LayerNorm(d)
        self.norm_ffn = nn.LayerNorm(d)

    def _split(self, x):
        b, n, _ = x.shape
        return x.view(b, n, self.n_heads, self.d_head).transpose(1, 2)

    def _merge(self, x):
        b, _, n, _ = x.shape
        return x.transpose(1, 2).reshape(b, n, self.n_heads * self.d_head)

    def forward(self, x, qpos, memory, memory_valid=None):
        h = x + qpos
        _, sa = standard_attention(self._split(self.self_q(h)),
                                   self._split(self.self_k(h)),
                                   self._split(self.self_v(x)))
        x = self.norm_self(x + self.self_out(self._merge(sa)))

        h = x + qpos
        mask = memory_valid[:, None] if memory_valid is not None else None
        _, ca = standard_attention(self._split(self.cross_q(h)),
                                   self._split(self.cross_k(memory)),
                                   self._split(self.cross_v(memory)), mask)
        x = self.norm_cross(x + self.cross_out(self._merge(ca)))
        return self.norm_ffn(x + self.ffn(x))


class PartLocator(nn.Module):
    """Layout CVAE: encoders E_b/E_c, prior/recognition nets, twin decoders."""

    def __init__(self, cfg: LocatorConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.gat.d_model

        self.part_embed = nn.Embedding(cfg.n_parts, d)
        self.box_proj = nn.Linear(4, d)
        self.layout_in = nn.Linear(2 * d, d)

        self.enc_layout = GatEncoder(cfg.gat)      # E_b (recognition side)
        self.condition = ConditionEncoder(          # E_c
            cfg.gat, cfg.vocab_size, cfg.max_condition_points)

        def mlp(d_in):
            return nn.Sequential(nn.Linear(d_in, d), nn.ReLU(),
                                 nn.Linear(d, 2 * cfg.z_dim))
        self.prior_net_mlp = mlp(d)
        self.recog_net_mlp = mlp(2 * d)

        self.z_proj = nn.Linear(cfg.z_dim, d)
        self.xy_proj = nn.Linear(2, d)
        self.dec_xy = nn.ModuleList(
            _DecoderLayer(cfg.gat) for _ in range(cfg.n_decoder_layers))
        self.dec_wh = nn.ModuleList(
            _DecoderLayer(cfg.gat) for _ in range(cfg.n_decoder_layers))

        m = cfg.n_components
        self.head_loc = nn.Linear(d, 6 * m)
        self.head_size = nn.Linear(d, 6 * m)
        self.head_presence = nn.Linear(d, 1)

        # flipped to 1 by the training loop / checkpoint load; generation on
        # fresh random weights is a bug we want loud
        self.register_buffer("fitted", torch.zeros((), dtype=torch.uint8))

    # -- encoders ----------------------------------------------------------

    def encode_layout(self, geom: torch.Tensor, present: torch.Tensor
                      ) -> tuple[torch.Tensor, torch.Tensor]:
        """geom (B, P, 4), present (B, P) bool -> (cls_b, tokens).

        Tokens concatenate the part embedding with a projembedding of the box
        geometry; absent slots carry zero geometry.  The relation graph
        connects overlapping present boxes.
        """
        if not present.any():
            raise ValueError("cannot encode an all-absent layout")
        b, p, _ = geom.shape
        ids = torch.arange(p, device=geom.device).expand(b, p)
        tok = self.layout_in(torch.cat(
            [self.part_embed(ids), self.box_proj(geom)], dim=-1))
        adj = _box_adjacency_batch(geom, present)
        return self.enc_layout(tok, adj)

    def encode_strokes(self, sketches: list[VectorSketch]
                       ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Point tokens chained per stroke -> (cls_c, tokens, valid)."""
        return self.condition.strokes(sketches)

    def encode_text(self, token_ids: torch.Tensor
                    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Word-id tokens (B, L), 0 = padding, chained left to right."""
        return self.condition.text(token_ids)

    def encode_tokens(self, embeds: torch.Tensor, adj: torch.Tensor,
                      valid: torch.Tensor | None = None):
        """Escape hatch for custom condition token sets (e.g. room programs)."""
        return self.condition.tokens(embeds, adj, valid)

    def encode_condition(self, condition):
        """Dispatch on condition kind: sketches, captions or raw ids."""
        return self.condition.dispatch(condition)

    # -- latent nets --------------------------------------------------------

    def prior_net(self, cls_c: torch.Tensor) -> LatentGaussian:
        mu, logvar = self.prior_net_mlp(cls_c).chunk(2, dim=-1)
        return LatentGaussian(mu, logvar)

    def recog_net(self, cls_b: torch.Tensor, cls_c: torch.Tensor) -> LatentGaussian:
        mu, logvar = self.recog_net_mlp(
            torch.cat([cls_b, cls_c], dim=-1)).chunk(2, dim=-1)
        return LatentGaussian(mu, logvar)

    # -- decoders -----------------------------------------------------------

    def _run_decoder(self, layers, z: torch.Tensor, memory: torch.Tensor,
                     memory_valid: torch.Tensor,
                     extra_query: torch.Tensor | None = None,
                     query_embeds: torch.Tensor | None = None) -> torch.Tensor:
        b = z.shape[0]
        if query_embeds is None:
            query_embeds = self.part_embed.weight[None].expand(
                b, self.cfg.n_parts, -1)
        x = self.z_proj(z)[:, None, :].expand_as(query_embeds)
        if extra_query is not None:
            x = x + extra_query
        for layer in layers:
            x = layer(x, query_embeds, memory, memory_valid)
        return x

    def decode(self, z: torch.Tensor, memory: torch.Tensor,
               memory_valid: torch.Tensor, xy: torch.Tensor,
               query_embeds: torch.Tensor | None = None) -> DecoderOutputs:
        """Score heads for a known (teacher-forced or sampled) location set.

        z (B, z_dim); memory = condition tokens (B, n, d); xy (B, P, 2) are
        the box centers the size decoder conditions on.
        """
        m = self.cfg.n_components
        f_xy = self._run_decoder(self.dec_xy, z, memory, memory_valid,
                                 query_embeds=query_embeds)
        f_wh = self._run_decoder(self.dec_wh, z, memory, memory_valid,
                                 extra_query=self.xy_proj(xy),
                                 query_embeds=query_embeds)
        return DecoderOutputs(
            location=split_gmm(self.head_loc(f_xy), m),
            size=split_gmm(self.head_size(f_wh), m),
            presence_logits=self.head_presence(f_xy).squeeze(-1),
            f_xy=f_xy, f_wh=f_wh)

    # -- losses -------------------------------------------------------------

    def box_nll(self, out: DecoderOutputs, geom: torch.Tensor,
                present: torch.Tensor) -> torch.Tensor:
        """Mean location + size NLL over present parts (absent contribute 0)."""
        mask = present.to(geom.dtype)
        return (gmm_nll(out.location, geom[..., 0:2], mask)
                + gmm_nll(out.size, geom[..., 2:4], mask))

    def presence_loss(self, logits: torch.Tensor, present: torch.Tensor
                      ) -> torch.Tensor:
        return nn.functional.binary_cross_entropy_with_logits(
            logits, present.to(logits.dtype))

    def loss(self, geom: torch.Tensor, present: torch.Tensor, condition,
             kl_weight: float = 1.0, generator=None,
             query_embeds: torch.Tensor | None = None
             ) -> dict[str, torch.Tensor]:
        """Teacher-forced training loss on a batch of layouts + conditions.

        Returns the total plus each term; z comes from the recognition net.
        """
        cls_c, memory, memory_valid = self.encode_condition(condition)
        cls_b, _ = self.encode_layout(geom, present)
        q = self.recog_net(cls_b, cls_c)
        p = self.prior_net(cls_c)
        z = q.sample(generator)
        out = self.decode(z, memory, memory_valid, xy=geom[..., 0:2],
                          query_embeds=query_embeds)

        l_box = self.box_nll(out, geom, present)
        l_presence = self.presence_loss(out.presence_logits, present)
        l_kl = kl_divergence(q, p).mean()
        total = l_box + l_presence + kl_weight * l_kl
        return {"total": total, "box": l_box, "presence": l_presence, "kl": l_kl}

    # -- generation ---------------------------------------------------------

    @torch.no_grad()
    def generate_layout(self, condition, n_samples: int = 1,
                        temperature: float | None = None,
                        generator: torch.Generator | None = None,
                        force_present: torch.Tensor | None = None,
                        query_embeds: torch.Tensor | None = None,
                        ) -> list[CoarseLayout]:
        """Sample layouts from the conditional prior.

        Presence is thresholded on the sigmoid (ties toward present); sizes
        are sampled conditioned on the sampled centers; boxes are clipped to
        the unit square.  Temperature scales both z and the GMM draws.
        """
        if not bool(self.fitted.item()):
            raise RuntimeError("model has no trained weights loaded")
        tau = self.cfg.temperature if temperature is None else temperature
        cls_c, memory, memory_valid = self.encode_condition(condition)
        if cls_c.shape[0] == 1 and n_samples > 1:
            cls_c = cls_c.expand(n_samples, -1)
            memory = memory.expand(n_samples, -1, -1)
            memory_valid = memory_valid.expand(n_samples, -1)
            if query_embeds is not None and query_embeds.shape[0] == 1:
                query_embeds = query_embeds.expand(n_samples, -1, -1)

        z = self.prior_net(cls_c).sample(generator, temperature=tau)
        b = z.shape[0]
        p = query_embeds.shape[1] if query_embeds is not None else self.cfg.n_parts
        probe = self.decode(z, memory, memory_valid,
                            xy=torch.zeros(b, p, 2, dtype=z.dtype, device=z.device),
                            query_embeds=query_embeds)
        xy = gmm_sample(probe.location, tau, generator)
        out = self.decode(z, memory, memory_valid, xy=xy,
                          query_embeds=query_embeds)
        wh = gmm_sample(out.size, tau, generator)

        prob = torch.sigmoid(probe.presence_logits)
        present = prob >= self.cfg.presence_threshold
        if force_present is not None:
            present = present | force_present.to(present.device)

        wh = wh.clamp(MIN_BOX_EXTENT, 1.0)
        half = wh / 2
        xy = torch.maximum(torch.minimum(xy, 1.0 - half), half)
        geom = torch.cat([xy, wh], dim=-1)

        layouts = []
        for i in range(b):
            g = geom[i].double().cpu().numpy()
            pres = present[i].cpu().numpy()
            # re-clamp at 64 bits: the float32 clamp above can overshoot the
            # canvas by an ulp once the values are upcast
            half = g[:, 2:] / 2
            g[:, :2] = np.minimum(np.maximum(g[:, :2], half), 1.0 - half)
            g[~pres] = 0.0
            layouts.append(CoarseLayout.from_arrays(g, pres).validate())
        return layouts


def _box_adjacency_batch(geom: torch.Tensor, present: torch.Tensor
                         ) -> torch.Tensor:
    """Overlap graph over present boxes for a (B, P, 4) geometry batch."""
    half = geom[..., 2:4] / 2
    lo = geom[..., 0:2] - half   # (B, P, 2)
    hi = geom[..., 0:2] + half
    meet = (lo[:, :, None, :] <= hi[:, None, :, :]) \
        & (lo[:, None, :, :] <= hi[:, :, None, :])
    adj = meet.all(dim=-1) & present[:, :, None] & present[:, None, :]
    p = geom.shape[1]
    adj &= ~torch.eye(p, dtype=torch.bool, device=geom.device)
    return adj


def layout_batch(layouts: list[CoarseLayout], dtype=torch.float32
                 ) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack layouts into (geom (B, P, 4), present (B, P)) tensors."""
    geoms, presents = zip(*(lay.to_arrays() for lay in layouts))
    return (torch.as_tensor(np.stack(geoms), dtype=dtype),
            torch.as_tensor(np.stack(presents)))

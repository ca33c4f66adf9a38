"""Part sketcher: layout-conditioned adversarial raster generation.

Turns a coarse part layout (plus the user's initial strokes, or a caption)
into a 128x128 sketch image.  Per-part codes u_t come from graph-aware
encoders over the layout and the condition; a small conv encoder maps the
condition raster to a 16x16 spatial code that a residual upsampling decoder
grows back to full resolution.  Every decoder normalization is modulated by
per-part affine parameters, spatially gated by regressed part masks pasted
into their boxes — parts control "their" pixels.  Three hinge critics score
the whole image, per-part crops and random texture patches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .fixtures import CAPTION_WORDS
from .gat import GatConfig, GatEncoder
from .locator import (
    ConditionEncoder,
    PartLocator,
    _box_adjacency_batch,
    layout_batch,
)
from .sketch import (
    CoarseLayout,
    RasterImage,
    VectorSketch,
    boxes_from_annotations,
    rasterize,
)

IMAGE_SIZE = 128
SPATIAL_SIZE = 16   # R_E output resolution; also the mask regressor output
CROP_SIZE = 32      # part-crop / appearance-patch resolution


@dataclass
class SketcherConfig:
    n_parts: int = 6
    channels: int = 32           # conv width unit; spatial code is 4x this
    n_patches: int = 4           # appearance patches per image
    vocab_size: int = len(CAPTION_WORDS)
    max_condition_points: int = 48
    gat: GatConfig = field(default_factory=GatConfig)

    def __post_init__(self):
        if self.n_parts <= 0 or self.channels <= 0 or self.n_patches <= 0:
            raise ValueError("n_parts, channels and n_patches must be positive")

    @property
    def spatial_channels(self) -> int:
        return 4 * self.channels


def rasterize_batch(sketches: list[VectorSketch], size: int = IMAGE_SIZE,
                    dtype=torch.float32) -> torch.Tensor:
    """Stack sketch rasters into a (B, 1, size, size) tensor."""
    return torch.stack([
        torch.as_tensor(rasterize(sk, size).pixels, dtype=dtype)[None]
        for sk in sketches])


def paste_masks(masks: torch.Tensor, geom: torch.Tensor,
                present: torch.Tensor, size: int) -> torch.Tensor:
    """Resize each part mask to its box and paste onto a size x size canvas.

    masks (B, P, m, m) in [0,1]; geom (B, P, 4) center/size boxes; absent
    parts produce all-zero maps.  Values stay in [0,1] (bilinear resize of a
    bounded signal into a zero canvas).
    """
    b, p, _, _ = masks.shape
    out = torch.zeros(b, p, size, size, dtype=masks.dtype, device=masks.device)
    for i in range(b):
        for t in range(p):
            if not present[i, t]:
                continue
            x, y, w, h = (float(v) for v in geom[i, t])
            wpx = min(max(int(round(w * size)), 1), size)
            hpx = min(max(int(round(h * size)), 1), size)
            x0 = min(max(int(round((x - w / 2) * size)), 0), size - wpx)
            y0 = min(max(int(round((y - h / 2) * size)), 0), size - hpx)
            patch = F.interpolate(masks[i, t][None, None], size=(hpx, wpx),
                                  mode="bilinear", align_corners=False)
            out[i, t, y0:y0 + hpx, x0:x0 + wpx] = patch[0, 0]
    return out


def crop_parts(images: torch.Tensor, geom: torch.Tensor,
               present: torch.Tensor, out_size: int = CROP_SIZE
               ) -> torch.Tensor:
    """Crop each present part's box and resize to out_size (absent -> blank).

    images (B, 1, S, S) -> (B, P, 1, out_size, out_size).
    """
    b, _, s, _ = images.shape
    p = geom.shape[1]
    out = torch.ones(b, p, 1, out_size, out_size, dtype=images.dtype,
                     device=images.device)
    for i in range(b):
        for t in range(p):
            if not present[i, t]:
                continue
            x, y, w, h = (float(v) for v in geom[i, t])
            x0 = min(max(int(math.floor((x - w / 2) * s)), 0), s - 1)
            y0 = min(max(int(math.floor((y - h / 2) * s)), 0), s - 1)
            x1 = min(max(int(math.ceil((x + w / 2) * s)), x0 + 1), s)
            y1 = min(max(int(math.ceil((y + h / 2) * s)), y0 + 1), s)
            crop = images[i:i + 1, :, y0:y1, x0:x1]
            out[i, t] = F.interpolate(crop, size=(out_size, out_size),
                                      mode="bilinear", align_corners=False)[0]
    return out


class ModulatedNorm(nn.Module):
    """Parameter-free instance norm with mask-gated per-part modulation.

    gamma/beta for each part come from its code u_t; their spatial support
    is the part's pasted mask, coverage-normalized so overlapping parts
    blend convexly and uncovered pixels stay unmodulated.
    """

    def __init__(self, n_channels: int, code_dim: int):
        super().__init__()
        self.norm = nn.InstanceNorm2d(n_channels, affine=False)
        self.to_affine = nn.Linear(code_dim, 2 * n_channels)

    def forward(self, x: torch.Tensor, u: torch.Tensor,
                weight_maps: torch.Tensor) -> torch.Tensor:
        normed = self.norm(x)
        gamma, beta = self.to_affine(u).chunk(2, dim=-1)   # (B, P, C) each
        denom = weight_maps.sum(dim=1, keepdim=True).clamp(min=1.0)
        w = weight_maps / denom                            # (B, P, S, S)
        gamma_map = torch.einsum("bpc,bphw->bchw", gamma, w)
        beta_map = torch.einsum("bpc,bphw->bchw", beta, w)
        return normed * (1.0 + gamma_map) + beta_map


class UpBlock(nn.Module):
    """Residual decoder block with modulated norms; optional 2x upsample."""

    def __init__(self, c_in: int, c_out: int, code_dim: int, upsample: bool):
        super().__init__()
        self.upsample = upsample
        self.norm1 = ModulatedNorm(c_in, code_dim)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.norm2 = ModulatedNorm(c_out, code_dim)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x, u, weight_maps):
        if self.upsample:
            x = F.interpolate(x, scale_factor=2, mode="nearest")
        h = self.conv1(F.relu(self.norm1(x, u, weight_maps)))
        h = self.conv2(F.relu(self.norm2(h, u, weight_maps)))
        return self.skip(x) + h


class MaskRegressor(nn.Module):
    """u_t -> soft 16x16 part mask via two transposed-conv upsamplings."""

    def __init__(self, code_dim: int, channels: int):
        super().__init__()
        self.channels = channels
        self.seed = nn.Linear(code_dim, channels * 4 * 4)
        self.up1 = nn.ConvTranspose2d(channels, channels, 4, stride=2, padding=1)
        self.up2 = nn.ConvTranspose2d(channels, channels, 4, stride=2, padding=1)
        self.head = nn.Conv2d(channels, 1, 3, padding=1)

    def forward(self, u: torch.Tensor) -> torch.Tensor:
        b, p, _ = u.shape
        x = self.seed(u).view(b * p, self.channels, 4, 4)
        x = F.relu(self.up1(x))
        x = F.relu(self.up2(x))
        return torch.sigmoid(self.head(x)).view(b, p, SPATIAL_SIZE, SPATIAL_SIZE)


class PartSketcher(nn.Module):
    """Generator: fused part codes + spatial condition code -> raster."""

    def __init__(self, cfg: SketcherConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.gat.d_model
        c = cfg.channels

        # layout encoder (same shape as the locator's E_b)
        self.part_embed = nn.Embedding(cfg.n_parts, d)
        self.box_proj = nn.Linear(4, d)
        self.layout_in = nn.Linear(2 * d, d)
        self.enc_layout = GatEncoder(cfg.gat)
        self.condition = ConditionEncoder(cfg.gat, cfg.vocab_size,
                                          cfg.max_condition_points)
        self.fuse = nn.Linear(2 * d, d)

        # R_E: three stride-2 convs, 128 -> 16
        cg = cfg.spatial_channels
        self.spatial_enc = nn.Sequential(
            nn.Conv2d(1, c, 3, stride=2, padding=1), nn.LeakyReLU(0.2),
            nn.Conv2d(c, 2 * c, 3, stride=2, padding=1), nn.LeakyReLU(0.2),
            nn.Conv2d(2 * c, cg, 3, stride=2, padding=1), nn.LeakyReLU(0.2))
        # text mode drops R_E: the condition cls is broadcast to the grid
        self.cls_to_spatial = nn.Linear(d, cg)

        self.mask_regressor = MaskRegressor(d, c)
        self.blocks = nn.ModuleList([
            UpBlock(cg, 2 * c, d, upsample=True),    # 16 -> 32
            UpBlock(2 * c, c, d, upsample=True),     # 32 -> 64
            UpBlock(c, c, d, upsample=True),         # 64 -> 128
            UpBlock(c, c, d, upsample=False),        # 128
        ])
        self.out_norm = ModulatedNorm(c, d)
        self.out_conv = nn.Conv2d(c, 1, 3, padding=1)

        self.register_buffer("fitted", torch.zeros((), dtype=torch.uint8))

    def encode_layout(self, geom: torch.Tensor, present: torch.Tensor):
        b, p, _ = geom.shape
        ids = torch.arange(p, device=geom.device).expand(b, p)
        tok = self.layout_in(torch.cat(
            [self.part_embed(ids), self.box_proj(geom)], dim=-1))
        adj = _box_adjacency_batch(geom, present)
        return self.enc_layout(tok, adj)

    def fuse_codes(self, geom: torch.Tensor, present: torch.Tensor, condition
                   ) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-part codes u_t (B, P, d) plus the condition cls (B, d)."""
        if not present.any():
            raise ValueError("cannot sketch an all-absent layout")
        _, tok_b = self.encode_layout(geom, present)
        cls_c, _, _ = self.condition.dispatch(condition)
        u = self.fuse(torch.cat(
            [tok_b, cls_c[:, None, :].expand_as(tok_b)], dim=-1))
        return u, cls_c

    def generate_image(self, geom: torch.Tensor, present: torch.Tensor,
                       condition, i_c: torch.Tensor | None = None,
                       noise: torch.Tensor | None = None,
                       generator: torch.Generator | None = None
                       ) -> torch.Tensor:
        """(B, 1, 128, 128) raster in [0, 1]; i_c=None takes the text path."""
        u, cls_c = self.fuse_codes(geom, present, condition)
        b = u.shape[0]
        if i_c is not None:
            g = self.spatial_enc(i_c)
        else:
            g = self.cls_to_spatial(cls_c)[:, :, None, None].expand(
                -1, -1, SPATIAL_SIZE, SPATIAL_SIZE)
        if noise is None:
            noise = torch.empty(b, g.shape[1], dtype=g.dtype,
                                device=g.device).normal_(generator=generator)
        g = g + noise[:, :, None, None]

        masks = self.mask_regressor(u)
        x = g
        size = SPATIAL_SIZE
        for block in self.blocks:
            if block.upsample:
                size *= 2
            w = paste_masks(masks, geom, present, size)
            x = block(x, u, w)
        w = paste_masks(masks, geom, present, size)
        x = F.relu(self.out_norm(x, u, w))
        return torch.sigmoid(self.out_conv(x))


def _conv_critic(in_channels: int, c: int, n_down: int) -> nn.Sequential:
    layers: list[nn.Module] = []
    ch = in_channels
    for i in range(n_down):
        nxt = c * (2 ** i)
        layers += [nn.Conv2d(ch, nxt, 3, stride=2, padding=1), nn.LeakyReLU(0.2)]
        ch = nxt
    layers += [nn.AdaptiveAvgPool2d(1), nn.Flatten(), nn.Linear(ch, 1)]
    return nn.Sequential(*layers)


class PartCritics(nn.Module):
    """Hinge critics: full image (+condition), part crops (+id), patches."""

    def __init__(self, cfg: SketcherConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.channels
        self.d_image = _conv_critic(2, c, n_down=4)                  # image + I_C
        self.d_part = _conv_critic(1 + cfg.n_parts, c, n_down=3)     # crop + id
        self.d_patch = _conv_critic(1, c, n_down=3)

    def discriminate(self, images: torch.Tensor, geom: torch.Tensor,
                     present: torch.Tensor, i_c: torch.Tensor | None = None,
                     generator: torch.Generator | None = None,
                     patch_ij: torch.Tensor | None = None
                     ) -> dict[str, torch.Tensor]:
        """Scores: im (B,), part (B, P) (absent 0), app (B, n_patches)."""
        b, _, s, _ = images.shape
        p = geom.shape[1]
        cond = i_c if i_c is not None else torch.ones_like(images)
        s_im = self.d_image(torch.cat([images, cond], dim=1)).squeeze(-1)

        crops = crop_parts(images, geom, present)          # (B, P, 1, 32, 32)
        ids = torch.eye(p, dtype=images.dtype, device=images.device)
        id_planes = ids[None, :, :, None, None].expand(b, p, p, CROP_SIZE, CROP_SIZE)
        part_in = torch.cat([crops, id_planes], dim=2).reshape(
            b * p, 1 + p, CROP_SIZE, CROP_SIZE)
        s_part = self.d_part(part_in).view(b, p) * present.to(images.dtype)

        if patch_ij is None:
            patch_ij = torch.randint(0, s - CROP_SIZE + 1,
                                     (b, self.cfg.n_patches, 2),
                                     generator=generator, device=images.device)
        patches = torch.stack([
            torch.stack([images[i, :, y:y + CROP_SIZE, x:x + CROP_SIZE]
                         for x, y in patch_ij[i].tolist()])
            for i in range(b)])                            # (B, n, 1, 32, 32)
        s_app = self.d_patch(
            patches.reshape(-1, 1, CROP_SIZE, CROP_SIZE)
        ).view(b, self.cfg.n_patches)
        return {"im": s_im, "part": s_part, "app": s_app, "patch_ij": patch_ij}


def _masked_mean(x: torch.Tensor, mask: torch.Tensor | None) -> torch.Tensor:
    if mask is None:
        return x.mean()
    m = mask.to(x.dtype)
    return (x * m).sum() / m.sum().clamp(min=1.0)


def critic_loss(real: dict, fake: dict, present: torch.Tensor,
                lambda_part: float = 10.0, lambda_app: float = 10.0
                ) -> torch.Tensor:
    """Symmetric hinge over the three critics, weighted like the G loss."""
    def hinge(r, f, mask=None):
        return (_masked_mean(F.relu(1.0 - r), mask)
                + _masked_mean(F.relu(1.0 + f), mask))
    return (hinge(real["im"], fake["im"])
            + lambda_part * hinge(real["part"], fake["part"], present)
            + lambda_app * hinge(real["app"], fake["app"]))


def generator_loss(fake: dict, present: torch.Tensor,
                   lambda_part: float = 10.0, lambda_app: float = 10.0
                   ) -> torch.Tensor:
    """Hinge generator objective: image + weighted part + appearance terms."""
    return (-fake["im"].mean()
            - lambda_part * _masked_mean(fake["part"], present)
            - lambda_app * fake["app"].mean())


def ps_loss(sketcher: PartSketcher, critics: PartCritics,
            geom: torch.Tensor, present: torch.Tensor, condition,
            real_images: torch.Tensor, i_c: torch.Tensor | None,
            lambda_part: float = 10.0, lambda_app: float = 10.0,
            generator: torch.Generator | None = None
            ) -> dict[str, torch.Tensor]:
    """One-shot (L_G, L_D) pair on a batch, same critics for both sides."""
    fake_images = sketcher.generate_image(geom, present, condition, i_c,
                                          generator=generator)
    real = critics.discriminate(real_images, geom, present, i_c,
                                generator=generator)
    fake_d = critics.discriminate(fake_images.detach(), geom, present, i_c,
                                  patch_ij=real["patch_ij"])
    fake_g = critics.discriminate(fake_images, geom, present, i_c,
                                  patch_ij=real["patch_ij"])
    return {
        "d": critic_loss(real, fake_d, present, lambda_part, lambda_app),
        "g": generator_loss(fake_g, present, lambda_part, lambda_app),
        "images": fake_images,
    }


# ---------------------------------------------------------------------------
# two-stage composition


def _boxes_pixel_mask(layout: CoarseLayout, part_ids: set[int],
                      size: int = IMAGE_SIZE) -> np.ndarray:
    mask = np.zeros((size, size), dtype=np.float64)
    for t in part_ids:
        box = layout.boxes[t]
        if not box.present:
            continue
        x0, y0, x1, y1 = box.bounds()
        xa, ya = int(math.floor(x0 * size)), int(math.floor(y0 * size))
        xb = min(int(math.ceil(x1 * size)), size)
        yb = min(int(math.ceil(y1 * size)), size)
        mask[max(ya, 0):yb, max(xa, 0):xb] = 1.0
    return mask


@torch.no_grad()
def complete_sketch(locator: PartLocator, sketcher: PartSketcher,
                    partial: VectorSketch,
                    temperature: float = 1.0,
                    generator: torch.Generator | None = None,
                    return_layout: bool = False):
    """Fill in the parts a partial sketch is missing.

    The locator proposes boxes for absent parts; the sketcher renders; only
    pixels inside missing-part boxes are composited (by ink max) onto the
    rasterized input, so existing strokes are never overwritten.  With
    `return_layout` the (image, layout) pair comes back instead.
    """
    n_parts = locator.cfg.n_parts
    partial.validate(n_parts)
    existing = partial.present_parts()
    base = rasterize(partial, IMAGE_SIZE)
    anno = boxes_from_annotations(partial, n_parts)
    if len(existing) == n_parts:
        return (base, anno) if return_layout else base

    force = torch.zeros(1, n_parts, dtype=torch.bool)
    for t in existing:
        force[0, t] = True
    layout = locator.generate_layout(partial, temperature=temperature,
                                     generator=generator,
                                     force_present=force)[0]
    # keep annotated geometry for the parts the user already drew
    boxes = [anno.boxes[t] if t in existing else layout.boxes[t]
             for t in range(n_parts)]
    union = CoarseLayout(boxes).validate()
    missing = {t for t in union.present_ids() if t not in existing}
    if not missing:
        return (base, union) if return_layout else base

    dt = next(sketcher.parameters()).dtype
    geom, present = layout_batch([union], dtype=dt)
    i_c = rasterize_batch([partial], dtype=dt)
    img = sketcher.generate_image(geom, present, [partial], i_c,
                                  generator=generator)
    gen = img[0, 0].double().cpu().numpy()

    region = _boxes_pixel_mask(union, missing)
    gen_ink = (1.0 - gen) * region
    ink = np.maximum(1.0 - base.pixels, gen_ink)
    out = RasterImage(np.clip(1.0 - ink, 0.0, 1.0))
    return (out, union) if return_layout else out


@torch.no_grad()
def text_to_sketch(locator: PartLocator, sketcher: PartSketcher, prompt: str,
                   temperature: float = 1.0,
                   generator: torch.Generator | None = None,
                   return_layout: bool = False):
    """Caption -> layout -> raster; the sketcher runs without R_E."""
    if not prompt.strip():
        raise ValueError("empty prompt")
    layout = locator.generate_layout(prompt, temperature=temperature,
                                     generator=generator)[0]
    if not any(b.present for b in layout.boxes):
        # a usable sketch needs at least one part; fall back to forcing the
        # most confident slot rather than erroring on a valid prompt
        layout = locator.generate_layout(
            prompt, temperature=temperature, generator=generator,
            force_present=torch.tensor([[True] + [False] * (locator.cfg.n_parts - 1)]))[0]
    dt = next(sketcher.parameters()).dtype
    geom, present = layout_batch([layout], dtype=dt)
    img = sketcher.generate_image(geom, present, prompt, i_c=None,
                                  generator=generator)
    out = RasterImage(np.clip(img[0, 0].double().cpu().numpy(), 0.0, 1.0))
    return (out, layout) if return_layout else out

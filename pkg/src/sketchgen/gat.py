"""Graph-aware transformer: attention re-weighted by learned edge strengths.

Standard multi-head self-attention treats tokens as an unordered soup;
sketch parts come with an explicit relation graph (overlapping boxes,
consecutive stroke points).  The blocks here inject that structure twice:

* learned edge weights gate the attention pattern, so probability mass is
  renormalized over each token's graph neighborhood, and
* a spectral-style graph convolution updates the value pathway before
  mixing, so aggregated content is structure-aware.

Alternative wirings used in ablations (plain transformer, conv-only, serial
conv->attention stacking) are selectable via GatConfig.mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

MODES = ("gat", "plain_transformer", "gcn_only", "serial_stack")

NEG_INF = float("-inf")


@dataclass
class GatConfig:
    d_model: int = 512
    n_heads: int = 8
    n_blocks: int = 6
    ffn_mult: int = 4
    dropout: float = 0.0
    mode: str = "gat"

    def __post_init__(self):
        if self.d_model <= 0 or self.n_heads <= 0 or self.n_blocks <= 0:
            raise ValueError("d_model, n_heads and n_blocks must be positive")
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.mode not in MODES:
            raise ValueError(f"mode {self.mode!r} not one of {MODES}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout {self.dropout} outside [0, 1)")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


# ---------------------------------------------------------------------------
# functional core


def standard_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor,
                       valid_mask: torch.Tensor | None = None
                       ) -> tuple[torch.Tensor, torch.Tensor]:
    """Scaled dot-product attention; returns (alpha, output).

    q, k, v: (..., n, d_head).  valid_mask (..., n) marks real tokens；
    padded keys get zero attention and rows renormalize over the rest.
    """
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ValueError(f"incompatible attention shapes {q.shape} {k.shape} {v.shape}")
    phi = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    if valid_mask is not None:
        phi = phi.masked_fill(~valid_mask[..., None, :], NEG_INF)
    alpha = torch.softmax(phi, dim=-1)
    return alpha, alpha @ v


def edge_weights(nodes: torch.Tensor, adj: torch.Tensor, w_a: torch.Tensor,
                 w_b: torch.Tensor) -> torch.Tensor:
    """Learned directed edge strengths e_ij in (0, 1) on graph edges, 0 off.

    e_ij = sigmoid(w_b . relu(W_a [n_i, n_j])) when j is a neighbor of i.
    The concatenation is evaluated as a split matmul so the n*n pair tensor
    is built at hidden width, not 2*d.  Generally non-symmetric.
    """
    d = nodes.shape[-1]
    if w_a.shape[-1] != 2 * d:
        raise ValueError(f"W_a expects rows of width {2 * d}, got {w_a.shape}")
    left = nodes @ w_a[..., :d].transpose(-2, -1)    # (..., n, hidden)
    right = nodes @ w_a[..., d:].transpose(-2, -1)
    pre = torch.relu(left[..., :, None, :] + right[..., None, :, :])
    e = torch.sigmoid((pre * w_b[..., None, None, :]).sum(dim=-1))
    return e * adj.to(e.dtype)


def graph_conv(nodes: torch.Tensor, e: torch.Tensor, w_c: torch.Tensor
               ) -> torch.Tensor:
    """Residual spectral update: relu(n_i + sum_j e_ij W_c n_j).

    Isolated nodes keep (the ReLU of) their own features.
    """
    return torch.relu(nodes + e @ (nodes @ w_c.transpose(-2, -1)))


def graph_aware_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor,
                          e: torch.Tensor,
                          valid_mask: torch.Tensor | None = None
                          ) -> tuple[torch.Tensor, torch.Tensor]:
    """Attention renormalized over graph neighborhoods; returns (alpha, out).

    alpha_ij = e_ij exp(phi_ij) / sum_{j in N(i)} e_ij exp(phi_ij), with
    phi the scaled dot-product scores.  Entries off the neighborhood are
    exactly zero.  Rows whose neighborhood is empty (or entirely
    zero-weighted) fall back to the standard softmax so no row is ever NaN.
    """
    phi = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    active = e > 0
    if valid_mask is not None:
        active = active & valid_mask[..., None, :]
    # max-shift within each neighborhood keeps exp() bounded; exponentiating
    # the masked scores keeps off-neighborhood terms at exactly 0
    phi_nbr = phi.masked_fill(~active, NEG_INF)
    shift = phi_nbr.amax(dim=-1, keepdim=True)
    shift = torch.where(torch.isfinite(shift), shift, torch.zeros_like(shift))
    w = e * torch.exp(phi_nbr - shift)
    denom = w.sum(dim=-1, keepdim=True)
    empty = denom == 0

    soft_alpha, _ = standard_attention(q, k, v, valid_mask)
    alpha = torch.where(empty, soft_alpha, w / torch.where(empty, torch.ones_like(denom), denom))
    return alpha, alpha @ v


def sinusoidal_positions(pos_ids: torch.Tensor, dim: int,
                         dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Fixed sin/cos encodings for integer position ids, shape (..., dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=dtype)
                      / half).to(pos_ids.device)
    ang = pos_ids[..., None].to(dtype) * freqs
    pe = torch.zeros(*pos_ids.shape, dim, dtype=dtype, device=pos_ids.device)
    pe[..., 0::2] = torch.sin(ang)
    pe[..., 1::2] = torch.cos(ang)
    return pe


# ---------------------------------------------------------------------------
# modules


class _EdgeParams(nn.Module):
    """A bank of edge-weight MLPs (one per head; n_heads=1 for block-level)."""

    def __init__(self, n_heads: int, hidden: int, d_model: int):
        super().__init__()
        self.w_a = nn.Parameter(torch.empty(n_heads, hidden, 2 * d_model))
        self.w_b = nn.Parameter(torch.empty(n_heads, hidden))
        nn.init.xavier_uniform_(self.w_a)
        nn.init.uniform_(self.w_b, -1.0 / math.sqrt(hidden), 1.0 / math.sqrt(hidden))

    def forward(self, nodes: torch.Tensor, adj: torch.Tensor) -> torch.Tensor:
        """nodes (B, n, d), adj (B, n, n) -> e (B, n_heads, n, n)."""
        return edge_weights(nodes[:, None], adj[:, None], self.w_a, self.w_b)


class GatBlock(nn.Module):
    """One encoder block: graph-aware MHSA + feed-forward, post-norm."""

    def __init__(self, cfg: GatConfig):
        super().__init__()
        self.cfg = cfg
        d, nh = cfg.d_model, cfg.n_heads
        self.q_proj = nn.Linear(d, d)
        self.k_proj = nn.Linear(d, d)
        self.v_proj = nn.Linear(d, d)
        self.out_proj = nn.Linear(d, d)
        if cfg.mode in ("gat",):
            self.attn_edges = _EdgeParams(nh, cfg.d_head, d)
        if cfg.mode in ("gat", "gcn_only", "serial_stack"):
            self.conv_edges = _EdgeParams(1, cfg.d_head, d)
            self.conv_weight = nn.Parameter(torch.empty(d, d))
            nn.init.xavier_uniform_(self.conv_weight)
        if cfg.mode == "serial_stack":
            self.conv_out = nn.Linear(d, d)
            self.norm_conv = nn.LayerNorm(d)
        self.ffn = nn.Sequential(
            nn.Linear(d, cfg.ffn_mult * d), nn.ReLU(),
            nn.Linear(cfg.ffn_mult * d, d))
        self.norm_attn = nn.LayerNorm(d)
        self.norm_ffn = nn.LayerNorm(d)
        self.drop = nn.Dropout(cfg.dropout)

    def _split_heads(self, x: torch.Tensor) -> torch.Tensor:
        b, n, _ = x.shape
        return x.view(b, n, self.cfg.n_heads, self.cfg.d_head).transpose(1, 2)

    def _merge_heads(self, x: torch.Tensor) -> torch.Tensor:
        b, _, n, _ = x.shape
        return x.transpose(1, 2).reshape(b, n, self.cfg.d_model)

    def _graph_conved(self, h: torch.Tensor, adj: torch.Tensor) -> torch.Tensor:
        e = self.conv_edges(h, adj)[:, 0]
        return graph_conv(h, e, self.conv_weight)

    def forward(self, x: torch.Tensor, adj: torch.Tensor, pos: torch.Tensor,
                valid_mask: torch.Tensor | None = None) -> torch.Tensor:
        """x (B, n, d); adj (B, n, n) bool; pos (B, n, d) or (n, d)."""
        mode = self.cfg.mode
        if mode == "serial_stack":
            # conv sublayer first, then a vanilla attention sublayer
            g = self._graph_conved(x + pos, adj)
            x = self.norm_conv(x + self.drop(self.conv_out(g)))

        h = x + pos
        if mode == "gcn_only":
            mixed = self.v_proj(self._graph_conved(h, adj))
        else:
            q = self._split_heads(self.q_proj(h))
            k = self._split_heads(self.k_proj(h))
            if mode == "gat":
                v = self._split_heads(self.v_proj(self._graph_conved(h, adj)))
                e = self.attn_edges(h, adj)
                mask = valid_mask[:, None] if valid_mask is not None else None
                _, out = graph_aware_attention(q, k, v, e, mask)
            else:  # plain_transformer / serial_stack use vanilla attention
                v = self._split_heads(self.v_proj(h))
                mask = valid_mask[:, None] if valid_mask is not None else None
                _, out = standard_attention(q, k, v, mask)
            mixed = self._merge_heads(out)

        x = self.norm_attn(x + self.drop(self.out_proj(mixed)))
        x = self.norm_ffn(x + self.drop(self.ffn(x)))
        return x


class GatEncoder(nn.Module):
    """L blocks over [cls] + tokens; cls is adjacent to every real token.

    Returns (cls_out, token_outs): the cls output is the contextualized
    summary of the whole sequence.  Fixed sinusoidal position encodings
    (cls at index 0, tokens at 1..n unless explicit ids are given) are
    re-added at the input of every block.
    """

    def __init__(self, cfg: GatConfig):
        super().__init__()
        self.cfg = cfg
        self.cls_token = nn.Parameter(torch.zeros(cfg.d_model))
        nn.init.normal_(self.cls_token, std=0.02)
        self.blocks = nn.ModuleList(GatBlock(cfg) for _ in range(cfg.n_blocks))

    def forward(self, tokens: torch.Tensor, adj: torch.Tensor,
                pos_ids: torch.Tensor | None = None,
                valid_mask: torch.Tensor | None = None
                ) -> tuple[torch.Tensor, torch.Tensor]:
        """tokens (B, n, d); adj (B, n, n) or (n, n); pos_ids (B, n) or (n,)."""
        b, n, d = tokens.shape
        dev, dt = tokens.device, tokens.dtype
        if adj.dim() == 2:
            adj = adj.expand(b, n, n)
        adj = adj.to(torch.bool)

        if valid_mask is None:
            valid_mask = torch.ones(b, n, dtype=torch.bool, device=dev)
        else:
            # padded tokens are not graph nodes; drop their edges so neither
            # attention nor the conv pathway can read them
            adj = adj & valid_mask[:, :, None] & valid_mask[:, None, :]
        if pos_ids is None:
            pos_ids = torch.arange(1, n + 1, device=dev).expand(b, n)
        elif pos_ids.dim() == 1:
            pos_ids = pos_ids.expand(b, n)

        x = torch.cat([self.cls_token.to(dt).expand(b, 1, d), tokens], dim=1)
        full_adj = torch.zeros(b, n + 1, n + 1, dtype=torch.bool, device=dev)
        full_adj[:, 1:, 1:] = adj
        full_adj[:, 0, 1:] = valid_mask
        full_adj[:, 1:, 0] = valid_mask
        full_valid = torch.cat(
            [torch.ones(b, 1, dtype=torch.bool, device=dev), valid_mask], dim=1)
        full_pos = torch.cat(
            [torch.zeros(b, 1, dtype=pos_ids.dtype, device=dev), pos_ids], dim=1)
        pe = sinusoidal_positions(full_pos, d, dtype=dt)

        for block in self.blocks:
            x = block(x, full_adj, pe, full_valid)
        return x[:, 0], x[:, 1:]

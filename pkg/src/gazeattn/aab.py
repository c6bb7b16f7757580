"""Auxiliary Attention Block: SAN features query the encoder's deepest map."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import torch
import torch.nn.functional as F
from torch import nn


def positional_encoding(shape: Sequence[int], dtype=torch.float32) -> torch.Tensor:
    """Fixed ``(3, D, W, H)`` coordinate field, linear in [-1, 1] along each axis.

    Axis of length n maps index i to ``(2i - n + 1) / (n - 1)``; length-1 axes
    give 0.
    """
    axes = []
    for n in shape:
        i = torch.arange(n, dtype=torch.float64)
        axes.append((2 * i - n + 1) / (n - 1) if n > 1 else torch.zeros(1, dtype=torch.float64))
    grids = torch.meshgrid(*axes, indexing="ij")
    return torch.stack(grids).to(dtype)


def scaled_dot_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor,
                         return_weights: bool = False):
    """``softmax(q k^T / sqrt(dim)) v`` over the last two axes."""
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ValueError(f"incompatible shapes q={tuple(q.shape)} k={tuple(k.shape)} v={tuple(v.shape)}")
    logits = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    if not torch.isfinite(logits).all():
        raise FloatingPointError("non-finite attention logits")
    weights = torch.softmax(logits, dim=-1)
    out = weights @ v
    return (out, weights) if return_weights else out


def _split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    *lead, n, c = x.shape
    return x.reshape(*lead, n, heads, c // heads).transpose(-3, -2)


def multi_head_attention(
    q: torch.Tensor,
    k: torch.Tensor,
    v: torch.Tensor,
    num_heads: int,
    w_o: Optional[torch.Tensor] = None,
    w_q: Optional[torch.Tensor] = None,
    w_k: Optional[torch.Tensor] = None,
    w_v: Optional[torch.Tensor] = None,
    return_weights: bool = False,
):
    """Multi-head attention on ``(..., n, c_h)`` inputs.

    ``w_q``/``w_k``/``w_v`` are ``(c_h, c_h)`` matrices whose consecutive
    column blocks of width ``c_h / num_heads`` are the per-head projections;
    ``None`` means identity. Each head is scaled by ``sqrt(c_h / num_heads)``.
    Head outputs are concatenated and multiplied by ``w_o``.
    """
    c_h = q.shape[-1]
    if num_heads < 1 or c_h % num_heads:
        raise ValueError(f"hidden dim {c_h} not divisible by {num_heads} heads")
    if w_q is not None:
        q = q @ w_q
    if w_k is not None:
        k = k @ w_k
    if w_v is not None:
        v = v @ w_v
    out, weights = scaled_dot_attention(
        _split_heads(q, num_heads), _split_heads(k, num_heads), _split_heads(v, num_heads),
        return_weights=True,
    )
    out = out.transpose(-3, -2).reshape(*q.shape[:-1], c_h)
    if w_o is not None:
        out = out @ w_o
    return (out, weights) if return_weights else out


class MultiHeadAttention(nn.Module):
    """Learned-projection wrapper around :func:`multi_head_attention`.

    Weights are stored as ``(c_in, c_out)`` matrices so they plug straight
    into the functional form.
    """

    def __init__(self, hidden_dim: int, num_heads: int):
        super().__init__()
        if hidden_dim % num_heads:
            raise ValueError(f"hidden_dim {hidden_dim} not divisible by num_heads {num_heads}")
        self.num_heads = num_heads
        bound = 1 / math.sqrt(hidden_dim)
        self.w_q = nn.Parameter(torch.empty(hidden_dim, hidden_dim).uniform_(-bound, bound))
        self.w_k = nn.Parameter(torch.empty(hidden_dim, hidden_dim).uniform_(-bound, bound))
        self.w_v = nn.Parameter(torch.empty(hidden_dim, hidden_dim).uniform_(-bound, bound))
        self.w_o = nn.Parameter(torch.empty(hidden_dim, hidden_dim).uniform_(-bound, bound))

    def forward(self, q, k, v, return_weights: bool = False):
        return multi_head_attention(q, k, v, self.num_heads, self.w_o, self.w_q, self.w_k, self.w_v,
                                    return_weights=return_weights)


@dataclass(frozen=True)
class AabConfig:
    encoder_channels: int = 64
    san_channels: int = 32
    hidden_dim: int = 64
    num_heads: int = 4
    ffn_dim: int = 128

    def __post_init__(self):
        counts = (self.encoder_channels, self.san_channels, self.hidden_dim, self.num_heads, self.ffn_dim)
        if min(counts) < 1:
            raise ValueError("AAB sizes must be >= 1")
        if self.hidden_dim % self.num_heads:
            raise ValueError("hidden_dim must be divisible by num_heads")


def _flatten(x: torch.Tensor) -> torch.Tensor:
    # (B, C, d, w, h) -> (B, d*w*h, C)
    return x.flatten(2).transpose(1, 2)


class AuxiliaryAttentionBlock(nn.Module):
    def __init__(self, cfg: AabConfig = AabConfig()):
        super().__init__()
        self.cfg = cfg
        c_h = cfg.hidden_dim
        self.q_proj = nn.Linear(cfg.san_channels, c_h)
        self.k_proj = nn.Linear(cfg.encoder_channels + 3, c_h)
        self.v_proj = nn.Linear(cfg.encoder_channels + 3, c_h)
        self.attention = MultiHeadAttention(c_h, cfg.num_heads)
        self.norm1 = nn.LayerNorm(c_h)
        self.ffn = nn.Sequential(nn.Linear(c_h, cfg.ffn_dim), nn.ReLU(), nn.Linear(cfg.ffn_dim, c_h))
        self.norm2 = nn.LayerNorm(c_h)
        self.out_proj = nn.Linear(c_h, cfg.encoder_channels)
        # residual identity at init: E'4 == E4 until out_proj learns something
        nn.init.zeros_(self.out_proj.weight)
        nn.init.zeros_(self.out_proj.bias)
        self.last_attention: Optional[torch.Tensor] = None

    def forward(self, e4: torch.Tensor, m2: torch.Tensor) -> torch.Tensor:
        big, small = e4.shape[-3:], m2.shape[-3:]
        if any(b % s for b, s in zip(big, small)):
            raise ValueError(f"E4 spatial size {tuple(big)} is not an integer multiple of M2's {tuple(small)}")
        ratio = tuple(b // s for b, s in zip(big, small))
        e4_ds = F.max_pool3d(e4, ratio, stride=ratio) if ratio != (1, 1, 1) else e4
        pos = positional_encoding(small, dtype=e4.dtype).to(e4.device)
        kv_in = torch.cat([e4_ds, pos.expand(e4.shape[0], -1, -1, -1, -1)], dim=1)

        q = self.q_proj(_flatten(m2))
        k = self.k_proj(_flatten(kv_in))
        v = self.v_proj(_flatten(kv_in))
        attended, weights = self.attention(q, k, v, return_weights=True)
        self.last_attention = weights.detach()

        x = self.norm1(q + attended)
        x = self.norm2(x + self.ffn(x))
        refined = self.out_proj(x)  # (B, n, c_e)
        refined = refined.transpose(1, 2).reshape(e4.shape[0], -1, *small)
        if ratio != (1, 1, 1):
            refined = F.interpolate(refined, size=tuple(big), mode="nearest")
        return e4 + refined

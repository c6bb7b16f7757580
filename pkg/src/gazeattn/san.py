"""Selective Attention Network.

A shallow two-group convolutional network run on a 4x average-pooled copy of
the input. It returns both group outputs (M1, M2) and the gaze estimate G,
a sigmoid map at 1/16 of the input resolution.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn


def kernel(rank: int, k: int) -> tuple[int, int, int]:
    """Kernel/stride tuple for a rank-uniform 3D op; 2D mode leaves depth at 1."""
    return (k, k, k) if rank == 3 else (1, k, k)


def conv(in_ch: int, out_ch: int, rank: int, k: int = 3) -> nn.Conv3d:
    pad = tuple(s // 2 for s in kernel(rank, k))
    return nn.Conv3d(in_ch, out_ch, kernel(rank, k), padding=pad)


def group_norm(channels: int, groups: int = 8) -> nn.GroupNorm:
    g = groups
    while channels % g:
        g -= 1
    return nn.GroupNorm(g, channels)


class ConvBlock(nn.Sequential):
    """``[conv -> groupnorm -> ReLU] x n_convs``."""

    def __init__(self, in_ch: int, out_ch: int, rank: int, groups: int = 8, n_convs: int = 2):
        layers = []
        for i in range(n_convs):
            layers += [conv(in_ch if i == 0 else out_ch, out_ch, rank), group_norm(out_ch, groups), nn.ReLU()]
        super().__init__(*layers)


def downsample_input(x: torch.Tensor, factor: int = 4) -> torch.Tensor:
    """Average-pool a ``(B, C, D, W, H)`` batch; depth is untouched when D == 1."""
    d, w, h = x.shape[-3:]
    k = (1 if d == 1 else factor, factor, factor)
    if d % k[0] or w % factor or h % factor:
        raise ValueError(f"spatial shape {(d, w, h)} not divisible by {factor}")
    if factor == 1:
        return x
    return F.avg_pool3d(x, k, stride=k)


@dataclass(frozen=True)
class SanConfig:
    in_channels: int = 4
    group_channels: tuple[int, int] = (16, 32)
    norm_groups: int = 8
    spatial_rank: int = 3
    input_downsample: int = 4

    def __post_init__(self):
        c1, c2 = self.group_channels
        if c1 < 1 or c2 < 1:
            raise ValueError("SAN channel counts must be >= 1")
        if c1 % self.norm_groups or c2 % self.norm_groups:
            raise ValueError("norm_groups must divide both SAN channel counts")
        if self.spatial_rank not in (2, 3):
            raise ValueError("spatial_rank must be 2 or 3")


class SelectiveAttentionNetwork(nn.Module):
    def __init__(self, cfg: SanConfig = SanConfig()):
        super().__init__()
        self.cfg = cfg
        c1, c2 = cfg.group_channels
        r = cfg.spatial_rank
        self.group1 = ConvBlock(cfg.in_channels, c1, r, cfg.norm_groups)
        self.group2 = ConvBlock(c1, c2, r, cfg.norm_groups)
        self.pool = nn.MaxPool3d(kernel(r, 2), stride=kernel(r, 2))
        self.gaze_head = conv(c2, 1, r, k=1)

    def forward(self, image: torch.Tensor):
        """``image`` is the full-resolution batch; returns ``(M1, M2, G)``."""
        x = downsample_input(image, self.cfg.input_downsample)
        d, w, h = x.shape[-3:]
        fd = 1 if self.cfg.spatial_rank == 2 else 4
        if d % fd or w % 4 or h % 4:
            raise ValueError(f"downsampled shape {(d, w, h)} not divisible by the two poolings")
        m1 = self.pool(self.group1(x))
        m2 = self.pool(self.group2(m1))
        g = torch.sigmoid(self.gaze_head(m2))
        return m1, m2, g

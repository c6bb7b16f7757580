"""Training losses and evaluation metrics.

Losses are torch functions (differentiable, dtype-preserving); metrics work
on numpy arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
from scipy import ndimage, stats


@dataclass(frozen=True)
class LossWeights:
    w1: float = 1.0
    w2: float = 0.5
    smoothing_eps: float = 1e-5
    bce_clamp: float = 1e-7
    w_aux: float = 0.5  # survival head of the multi-task variant

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0 or self.w_aux < 0:
            raise ValueError("loss weights must be non-negative")
        if self.smoothing_eps <= 0 or self.bce_clamp <= 0:
            raise ValueError("smoothing_eps and bce_clamp must be positive")


def _tensor(x, like: Optional[torch.Tensor] = None) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    dtype = like.dtype if like is not None else torch.float64
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def dice_score(s, s_gt, eps: float = 1e-5, reduce: bool = True) -> torch.Tensor:
    """Soft Dice ``(2 sum(S*G) + eps) / (sum(S^2) + sum(G^2) + eps)``.

    Inputs are ``(..., N, D, W, H)``; the score is computed per region (and
    per leading batch entry) and averaged unless ``reduce`` is False.
    """
    s = _tensor(s)
    s_gt = _tensor(s_gt, like=s).to(s.dtype)
    if s.shape != s_gt.shape:
        raise ValueError(f"shape mismatch {tuple(s.shape)} vs {tuple(s_gt.shape)}")
    dims = (-3, -2, -1)
    inter = (s * s_gt).sum(dim=dims)
    denom = (s * s).sum(dim=dims) + (s_gt * s_gt).sum(dim=dims)
    per_region = (2 * inter + eps) / (denom + eps)
    return per_region.mean() if reduce else per_region


def dice_loss(s, s_gt, weights: LossWeights = LossWeights()) -> torch.Tensor:
    return 1 - dice_score(s, s_gt, weights.smoothing_eps)


def gaze_bce_loss(g, g_gt, clamp: float = 1e-7, per_sample: bool = False) -> torch.Tensor:
    """Mean binary cross-entropy over all voxels of the gaze map.

    With ``per_sample`` the mean is taken per leading batch entry instead,
    returning a ``(B,)`` vector.
    """
    g = _tensor(g)
    g_gt = _tensor(g_gt, like=g).to(g.dtype)
    if g.shape != g_gt.shape:
        raise ValueError(f"shape mismatch {tuple(g.shape)} vs {tuple(g_gt.shape)}")
    g = g.clamp(clamp, 1 - clamp)
    ll = g_gt * torch.log(g) + (1 - g_gt) * torch.log1p(-g)
    if per_sample:
        return -ll.flatten(1).mean(dim=1)
    return -ll.mean()


def joint_loss(task_loss, gaze_loss, weights: LossWeights = LossWeights()):
    return weights.w1 * task_loss + weights.w2 * gaze_loss


def classification_ce_loss(probs, labels, mode: str = "multilabel", clamp: float = 1e-7) -> torch.Tensor:
    """Mean BCE over classes (``multilabel``) or categorical CE (``softmax``)."""
    probs = _tensor(probs)
    labels = _tensor(labels, like=probs).to(probs.dtype)
    if probs.shape != labels.shape:
        raise ValueError(f"shape mismatch {tuple(probs.shape)} vs {tuple(labels.shape)}")
    p = probs.clamp(clamp, 1 - clamp)
    if mode == "multilabel":
        return -(labels * torch.log(p) + (1 - labels) * torch.log1p(-p)).mean()
    if mode == "softmax":
        return -(labels * torch.log(p)).sum(dim=-1).mean()
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def hard_dice(pred: np.ndarray, gt: np.ndarray, eps: float = 1e-5) -> float:
    """Dice of two binary masks with the same smoothing convention as the loss."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    return float((2 * (pred * gt).sum() + eps) / (pred.sum() + gt.sum() + eps))


def directed_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from every positive voxel of ``a`` to the nearest positive of ``b``."""
    dist_to_b = ndimage.distance_transform_edt(~b)
    return dist_to_b[a]


def hausdorff95(a, b, max_distance: Optional[float] = None) -> float:
    """95th percentile of the pooled directed voxel distances between two masks.

    The percentile uses the lower order statistic: index
    ``floor(0.95 * (n - 1))`` of the sorted pooled distances. If either mask
    is empty the sentinel ``max_distance`` is returned (default: the volume
    diagonal).
    """
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if not a.any() or not b.any():
        if max_distance is None:
            max_distance = math.sqrt(sum(s * s for s in a.shape))
        return float(max_distance)
    pooled = np.concatenate([directed_distances(a, b), directed_distances(b, a)])
    return float(np.percentile(pooled, 95, method="lower"))


def auroc(scores: Sequence[float], labels: Sequence[int]) -> Optional[float]:
    """Mann-Whitney AUROC with ties counted as one half.

    Returns ``None`` when the labels contain only one class.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have the same length")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = stats.rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))

"""Fixation detection and ground-truth gaze map construction."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .data_model import (
    DataFormatError,
    Fixation,
    FixationSequence,
    GazeMap,
)


@dataclass(frozen=True)
class FixationFilterConfig:
    """I-VT parameters. Velocity in voxels per second, duration in ms."""

    velocity_threshold: float = 30.0
    min_fixation_duration: float = 100.0

    def __post_init__(self):
        if self.velocity_threshold <= 0 or self.min_fixation_duration <= 0:
            raise ValueError("velocity_threshold and min_fixation_duration must be > 0")


def filter_fixations(
    raw: FixationSequence, cfg: FixationFilterConfig = FixationFilterConfig()
) -> FixationSequence:
    """Velocity-threshold fixation detection.

    Consecutive samples whose point-to-point velocity stays below the
    threshold form one run. A run spans from its first timestamp to the end
    of its last sample (``t + duration``); runs at least
    ``min_fixation_duration`` long become one fixation located at the
    duration-weighted centroid of the run (plain mean when all durations are
    zero).
    """
    samples = list(raw)
    if len(samples) < 2:
        return FixationSequence()
    if any(s.kind != "raw" for s in samples):
        raise ValueError("filter_fixations expects raw gaze samples")

    pos = raw.positions()
    t = np.array([s.t for s in samples])
    step = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    velocity = step / (np.diff(t) / 1000.0)
    # breaks[i] is True when sample i+1 starts a new run
    breaks = velocity >= cfg.velocity_threshold

    out = []
    start = 0
    for i in range(1, len(samples) + 1):
        if i == len(samples) or breaks[i - 1]:
            run = samples[start:i]
            span = run[-1].t + run[-1].duration - run[0].t
            if span >= cfg.min_fixation_duration:
                w = np.array([s.duration for s in run], dtype=np.float64)
                if w.sum() <= 0:
                    w = np.ones(len(run))
                z, y, x = (w[:, None] * pos[start:i]).sum(axis=0) / w.sum()
                out.append(Fixation(run[0].t, x, y, z, span, "fixation"))
            start = i
    return FixationSequence(tuple(out))


def rasterize_fixations(fixations: FixationSequence, shape: Sequence[int]) -> GazeMap:
    """Impulse map with a 1 at the voxel nearest to each fixation."""
    shape = tuple(int(s) for s in shape)
    fixations.check_bounds(shape)
    out = np.zeros(shape, dtype=np.float32)
    if len(fixations):
        idx = np.rint(fixations.positions()).astype(int)
        out[idx[:, 0], idx[:, 1], idx[:, 2]] = 1.0
    return GazeMap(out)


def gaussian_kernel_1d(kernel_size: int) -> np.ndarray:
    """Truncated gaussian taps: sigma = size/4, support |offset| <= size/2."""
    sigma = kernel_size / 4.0
    radius = kernel_size // 2
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    return np.exp(-0.5 * (offsets / sigma) ** 2)


def gaussian_gaze_map(impulses: GazeMap, kernel_size: int = 10) -> GazeMap:
    """Blur an impulse map with a separable gaussian and peak-normalise to 1."""
    if kernel_size < 1:
        raise ValueError(f"kernel_size must be >= 1, got {kernel_size}")
    src = np.asarray(impulses.data, dtype=np.float64)
    if not np.all((src == 0) | (src == 1)):
        raise DataFormatError("gaussian_gaze_map expects a 0/1 impulse map")
    kernel = gaussian_kernel_1d(int(kernel_size))
    out = src
    for axis in range(3):
        out = ndimage.correlate1d(out, kernel, axis=axis, mode="constant", cval=0.0)
    peak = out.max()
    if peak > 0:
        out = out / peak
    return GazeMap(np.clip(out, 0.0, 1.0).astype(np.float32))


def block_max_pool(arr: np.ndarray, factor: int) -> np.ndarray:
    """Max-pool the last three axes by ``factor``; a depth of 1 is left alone."""
    *lead, d, w, h = arr.shape
    fd = 1 if d == 1 else factor
    if d % fd or w % factor or h % factor:
        raise ValueError(f"shape {(d, w, h)} is not divisible by factor {factor}")
    blocks = arr.reshape(*lead, d // fd, fd, w // factor, factor, h // factor, factor)
    n = len(lead)
    return blocks.max(axis=(n + 1, n + 3, n + 5))


def downsample_gaze_map(gaze: GazeMap, factor: int) -> GazeMap:
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if factor == 1:
        return gaze
    return GazeMap(block_max_pool(gaze.data, factor))


def gaze_target(
    fixations: FixationSequence,
    shape: Sequence[int],
    kernel_size: int = 10,
    factor: int = 16,
) -> GazeMap:
    """Full pipeline: fixations -> impulses -> gaussian -> downsampled target."""
    impulses = rasterize_fixations(fixations, shape)
    return downsample_gaze_map(gaussian_gaze_map(impulses, kernel_size), factor)

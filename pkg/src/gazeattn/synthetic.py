"""Seeded phantom volumes, nested tumour masks and simulated gaze.

Each phantom is a "head" ellipsoid with smooth background texture, a few
tumour blobs and some tumour-like distractor blobs. Region masks are
nested thresholds of one tumour field (WT > TC > ET), so region n is always
an erosion of region n-1. Expert gaze lands on the tumour and its boundary;
non-expert gaze wanders over the head with only a slight tumour bias and is
drawn to the distractors.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from scipy import ndimage

from .data_model import (
    DatasetRecord,
    Fixation,
    FixationSequence,
    ImageVolume,
    SegmentationMask,
    write_fixations,
    write_mask,
    write_volume,
)

REGION_NAMES = ("WT", "TC", "ET")
CXR_LABELS = ("Atelectasis", "Cardiomegaly", "Consolidation", "Edema", "Pleural Effusion")
SURVIVAL_CLASSES = ("short", "medium", "long")

# tumour-field thresholds per region: field is 1 at a blob centre, 0 on its rim
_REGION_LEVELS = (0.0, 0.35, 0.6)

# per-channel contrast of (head, edema, core, enhancing, distractor)
_CONTRAST = np.array([
    [0.50, 0.85, 0.80, 0.90, 0.80],  # flair-like
    [0.50, 0.45, 0.40, 1.00, 0.85],  # t1ce-like
    [0.45, 0.80, 0.70, 0.70, 0.45],  # t2-like
    [0.55, 0.45, 0.35, 0.50, 0.50],  # t1-like
])


@dataclass(frozen=True)
class PhantomConfig:
    shape: tuple[int, int, int] = (32, 32, 32)
    channels: int = 4
    num_regions: int = 3
    blob_count: tuple[int, int] = (1, 3)
    blob_radius: tuple[float, float] = (4.0, 6.0)
    distractor_count: tuple[int, int] = (1, 3)
    noise_std: float = 0.08
    seed: int = 0

    def __post_init__(self):
        if self.num_regions < 1 or self.num_regions > len(_REGION_LEVELS):
            raise ValueError(f"num_regions must be 1..{len(_REGION_LEVELS)}")
        if self.blob_count[0] < 1 or self.blob_count[0] > self.blob_count[1]:
            raise ValueError("blob_count must be a positive (min, max) range")
        lo, hi = self.blob_radius
        if lo <= 0 or lo > hi:
            raise ValueError("blob_radius must be a positive (min, max) range")
        d, w, h = self.shape
        limit = min(w, h) if d == 1 else min(d, w, h)
        # blob centres live inside the head, which spans ~70% of each axis
        if 2 * hi >= 0.7 * limit:
            raise ValueError(f"blob radius {hi} does not fit inside shape {self.shape}")

    @property
    def is_2d(self) -> bool:
        return self.shape[0] == 1


@dataclass(frozen=True)
class GazeSimConfig:
    expertise: Literal["expert", "non-expert"] = "expert"
    fixations_per_volume: tuple[int, int] = (20, 40)
    boundary_bias: float = 0.5
    tumor_bias: float = 0.05  # non-expert share of fixations aimed at the tumour
    distractor_bias: float = 0.4  # non-expert share aimed at tumour-like distractors
    duration_ms: float = 38000.0
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.fixations_per_volume
        if lo < 0 or lo > hi:
            raise ValueError("fixations_per_volume must be a (min, max) range with min >= 0")
        if not all(0 <= b <= 1 for b in (self.boundary_bias, self.tumor_bias, self.distractor_bias)):
            raise ValueError("biases must lie in [0, 1]")
        if self.duration_ms <= 0:
            raise ValueError("duration_ms must be positive")


def _grid(shape):
    return np.meshgrid(*(np.arange(n, dtype=np.float64) for n in shape), indexing="ij")


def _smooth_noise(rng, shape, sigma):
    field_ = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    return field_ / (field_.std() + 1e-12)


def _blob_field(shape, centre, radius, rng, is_2d):
    zz, yy, xx = _grid(shape)
    dz = 0.0 if is_2d else (zz - centre[0])
    r = np.sqrt(dz ** 2 + (yy - centre[1]) ** 2 + (xx - centre[2]) ** 2)
    wobble = 1 + 0.15 * _smooth_noise(rng, shape, 3.0)
    return 1 - r / (radius * wobble)


def _head_mask(shape, is_2d):
    zz, yy, xx = _grid(shape)
    c = [(n - 1) / 2 for n in shape]
    semi = [max(n * 0.45, 0.5) for n in shape]
    q = ((yy - c[1]) / semi[1]) ** 2 + ((xx - c[2]) / semi[2]) ** 2
    if not is_2d:
        q = q + ((zz - c[0]) / semi[0]) ** 2
    return q <= 1


def _sample_centre(rng, head, radius, is_2d):
    # centre must sit far enough inside the head that the blob stays inside
    inner = ndimage.binary_erosion(head, iterations=int(math.ceil(radius)) + 1) if not is_2d else \
        ndimage.binary_erosion(head[0], iterations=int(math.ceil(radius)) + 1)[None]
    idx = np.argwhere(inner)
    if len(idx) == 0:
        raise ValueError("blob radius too large for the phantom head")
    return idx[rng.integers(len(idx))] + rng.uniform(-0.5, 0.5, 3) * (np.array([0, 1, 1]) if is_2d else 1)


def generate_phantom(cfg: PhantomConfig, record_id: Optional[str] = None) -> DatasetRecord:
    """Build one deterministic phantom record from ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    shape = tuple(cfg.shape)
    is_2d = cfg.is_2d
    head = _head_mask(shape, is_2d)

    n_blobs = int(rng.integers(cfg.blob_count[0], cfg.blob_count[1] + 1))
    tumour = np.full(shape, -np.inf)
    blobs = []
    for _ in range(n_blobs):
        radius = float(rng.uniform(*cfg.blob_radius))
        centre = _sample_centre(rng, head, radius, is_2d)
        tumour = np.maximum(tumour, _blob_field(shape, centre, radius, rng, is_2d))
        blobs.append((centre, radius))

    regions = np.stack([tumour > lvl for lvl in _REGION_LEVELS[: cfg.num_regions]])
    wt = regions[0]

    n_distract = int(rng.integers(cfg.distractor_count[0], cfg.distractor_count[1] + 1))
    distract = np.zeros(shape, dtype=bool)
    for _ in range(n_distract):
        radius = float(rng.uniform(*cfg.blob_radius)) * 0.8
        centre = _sample_centre(rng, head, radius, is_2d)
        distract |= _blob_field(shape, centre, radius, rng, is_2d) > 0
    distract &= ~dilate_mask(wt, 5, is_2d)

    # tissue classes: 0 head, 1 edema, 2 core, 3 enhancing, 4 distractor
    tissue = np.zeros(shape, dtype=int)
    tissue[distract] = 4
    if cfg.num_regions >= 1:
        tissue[wt] = 1
    if cfg.num_regions >= 2:
        tissue[regions[1]] = 2
    if cfg.num_regions >= 3:
        tissue[regions[2]] = 3

    texture_sigma = 2.0
    channels = []
    for c in range(cfg.channels):
        contrast = _CONTRAST[c % len(_CONTRAST)]
        img = contrast[tissue] + 0.06 * _smooth_noise(rng, shape, texture_sigma)
        img = ndimage.gaussian_filter(img, 0.6 if not is_2d else (0, 0.6, 0.6))
        img = img * head + cfg.noise_std * rng.standard_normal(shape)
        channels.append(img)
    volume = ImageVolume(np.stack(channels).astype(np.float32))
    mask = SegmentationMask(regions.astype(np.float32))

    wt_fraction = float(wt.mean())
    if is_2d:
        labels = _cxr_labels(blobs, regions, shape)
    else:
        labels = np.zeros(len(SURVIVAL_CLASSES), dtype=np.float32)
        # bigger tumours -> shorter survival
        labels[0 if wt_fraction > 0.03 else 1 if wt_fraction > 0.012 else 2] = 1
    return DatasetRecord(
        id=record_id or f"phantom-{cfg.seed}",
        volume=volume,
        mask=mask,
        labels=labels,
        meta={"seed": int(cfg.seed), "blobs": n_blobs, "wt_fraction": wt_fraction,
              "distractors": distract},
    )


def _cxr_labels(blobs, regions, shape) -> np.ndarray:
    """Five binary findings derived from blob geometry."""
    _, w, h = shape
    wt = regions[0]
    centres = np.array([c for c, _ in blobs])
    radii = np.array([r for _, r in blobs])
    labels = [
        len(blobs) >= 2,
        radii.max() > np.mean([w, h]) * 0.16,
        centres[:, 2].mean() < h / 2,
        centres[:, 1].mean() < w / 2,
        wt.mean() > 0.04,
    ]
    return np.array(labels, dtype=np.float32)


def _shell(wt: np.ndarray, is_2d: bool) -> np.ndarray:
    structure = None
    if is_2d:
        structure = np.zeros((3, 3, 3), dtype=bool)
        structure[1] = ndimage.generate_binary_structure(2, 1)
    outer = ndimage.binary_dilation(wt, structure, iterations=2)
    inner = ndimage.binary_erosion(wt, structure, iterations=1)
    return outer & ~inner


def dilate_mask(mask: np.ndarray, iterations: int, is_2d: bool = False) -> np.ndarray:
    structure = None
    if is_2d:
        structure = np.zeros((3, 3, 3), dtype=bool)
        structure[1] = ndimage.generate_binary_structure(2, 1)
    return ndimage.binary_dilation(mask, structure, iterations=iterations)


def simulate_gaze(record: DatasetRecord, cfg: GazeSimConfig) -> FixationSequence:
    """Simulated fixations for one record, deterministic in ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    n = int(rng.integers(cfg.fixations_per_volume[0], cfg.fixations_per_volume[1] + 1))
    if n == 0:
        return FixationSequence()
    shape = record.volume.shape
    is_2d = record.volume.is_2d
    if record.mask is None:
        raise ValueError(f"record {record.id} has no mask to simulate gaze on")
    wt = record.mask.data[0] > 0.5
    if cfg.expertise == "expert" and not wt.any():
        raise ValueError(f"record {record.id}: empty tumour mask in expert mode")
    head = _head_mask(shape, is_2d)

    def pick(region: np.ndarray) -> np.ndarray:
        idx = np.argwhere(region)
        return idx[rng.integers(len(idx))].astype(np.float64)

    shell = _shell(wt, is_2d)
    distract = record.meta.get("distractors")
    if distract is None or not distract.any():
        distract = head
    points = []
    for _ in range(n):
        u = rng.random()
        if cfg.expertise == "expert":
            region = shell if u < cfg.boundary_bias else wt
        elif u < cfg.tumor_bias and wt.any():
            region = wt
        elif u < cfg.tumor_bias + cfg.distractor_bias:
            region = distract
        else:
            region = head
        p = pick(region) + rng.normal(0, 0.5, 3)
        if is_2d:
            p[0] = 0.0
        points.append(np.clip(p, 0, np.array(shape) - 1))

    # fixation durations ~ 150-450 ms with saccade gaps filling the viewing time
    durations = rng.uniform(150, 450, n)
    gaps = rng.uniform(20, 80, n)
    scale = cfg.duration_ms / (durations.sum() + gaps.sum())
    durations, gaps = durations * scale, gaps * scale
    t = np.concatenate([[0.0], np.cumsum(durations + gaps)[:-1]])
    return FixationSequence(tuple(
        Fixation(float(t[i]), float(p[2]), float(p[1]), float(p[0]), float(durations[i]), "fixation")
        for i, p in enumerate(points)
    ))


def expand_to_raw(fixations: FixationSequence, interval_ms: float = 20.0,
                  jitter: float = 0.1, seed: int = 0) -> FixationSequence:
    """Resample fixations into a raw gaze stream at a fixed sampling interval.

    Samples during a fixation jitter around its position; samples between
    fixations are linearly interpolated saccade points.
    """
    rng = np.random.default_rng(seed)
    fx = list(fixations)
    out = []
    for i, f in enumerate(fx):
        t = f.t
        while t < f.t + f.duration:
            d = min(interval_ms, f.t + f.duration - t)
            off = rng.normal(0, jitter, 3)
            out.append(Fixation(t, f.x + off[2], f.y + off[1], f.z + (off[0] if f.z else 0), d, "raw"))
            t += interval_ms
        if i + 1 < len(fx):
            nxt = fx[i + 1]
            while t < nxt.t:
                a = (t - f.t - f.duration) / max(nxt.t - f.t - f.duration, 1e-9)
                out.append(Fixation(t, f.x + a * (nxt.x - f.x), f.y + a * (nxt.y - f.y),
                                    f.z + a * (nxt.z - f.z), min(interval_ms, nxt.t - t), "raw"))
                t += interval_ms
    return FixationSequence(tuple(out))


# ---------------------------------------------------------------------------
# dataset writer
# ---------------------------------------------------------------------------


def _derive_seeds(seed: int, n: int, stream: int) -> list[int]:
    ss = np.random.SeedSequence([int(seed), stream])
    return [int(s.generate_state(1, np.uint64)[0] >> 1) for s in ss.spawn(n)]


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def manifest_hash(manifest: dict) -> str:
    body = {k: v for k, v in manifest.items() if k != "hash"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def build_dataset(
    n: int,
    phantom_cfg: PhantomConfig,
    gaze_cfg: GazeSimConfig,
    out_dir,
    gaze_ratio: float = 0.5,
    split: tuple[float, float, float] = (0.7, 0.1, 0.2),
) -> dict:
    """Write ``n`` phantom records plus ``manifest.json`` and return the manifest.

    Every record gets an image, a mask and both an expert and a non-expert
    fixation file; ``has_gaze`` marks the training records whose gaze may be
    used (``gaze_ratio`` of the train split).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 <= gaze_ratio <= 1:
        raise ValueError("gaze_ratio must lie in [0, 1]")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rec_seeds = _derive_seeds(phantom_cfg.seed, n, 0)
    gaze_seeds = _derive_seeds(phantom_cfg.seed, n, 1)

    order = np.random.default_rng(_derive_seeds(phantom_cfg.seed, 1, 2)[0]).permutation(n)
    n_train = int(round(split[0] * n))
    n_val = int(round(split[1] * n))
    splits = np.empty(n, dtype=object)
    splits[order[:n_train]] = "train"
    splits[order[n_train:n_train + n_val]] = "val"
    splits[order[n_train + n_val:]] = "test"
    train_ids = list(order[:n_train])
    n_gaze = int(round(gaze_ratio * n_train))
    has_gaze = np.zeros(n, dtype=bool)
    has_gaze[np.asarray(train_ids[:n_gaze], dtype=int)] = True

    records = []
    for i in range(n):
        rid = f"rec{i:04d}"
        rec = generate_phantom(PhantomConfig(**{**asdict(phantom_cfg), "seed": rec_seeds[i]}), rid)
        entry = {
            "id": rid,
            "seed": rec_seeds[i],
            "split": str(splits[i]),
            "has_gaze": bool(has_gaze[i]),
            "image": write_volume(rec.volume, out_dir / f"{rid}_image").name,
            "mask": write_mask(rec.mask, out_dir / f"{rid}_mask").name,
            "labels": [int(v) for v in rec.labels],
            "fixations": {},
        }
        for source, expertise in (("expert", "expert"), ("nonexpert", "non-expert")):
            gcfg = GazeSimConfig(**{**asdict(gaze_cfg), "expertise": expertise, "seed": gaze_seeds[i]})
            path = write_fixations(simulate_gaze(rec, gcfg), out_dir / f"{rid}_fixations_{source}.csv")
            entry["fixations"][source] = path.name
        entry["sha256"] = {
            "image": _sha256(out_dir / f"{rid}_image.raw"),
            "mask": _sha256(out_dir / f"{rid}_mask.raw"),
        }
        records.append(entry)

    manifest = {
        "format": "gazeattn-manifest",
        "version": 1,
        "mode": "2d" if phantom_cfg.is_2d else "3d",
        "task": "classification" if phantom_cfg.is_2d else "segmentation",
        "shape": list(phantom_cfg.shape),
        "channels": phantom_cfg.channels,
        "regions": list(REGION_NAMES[: phantom_cfg.num_regions]),
        "label_names": list(CXR_LABELS if phantom_cfg.is_2d else SURVIVAL_CLASSES),
        "phantom": _jsonable(asdict(phantom_cfg)),
        "gaze": _jsonable(asdict(gaze_cfg)),
        "gaze_ratio": gaze_ratio,
        "split_fractions": list(split),
        "records": records,
    }
    manifest["hash"] = manifest_hash(manifest)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def _jsonable(d):
    return json.loads(json.dumps(d))

"""Manifest loading, subset selection and in-memory training tensors."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from ..data_model import read_fixations, read_mask, read_volume
from ..gaze_processing import block_max_pool, gaze_target


@dataclass(frozen=True)
class Manifest:
    path: Path
    data: dict

    @property
    def root(self) -> Path:
        return self.path.parent

    @property
    def hash(self) -> str:
        return self.data.get("hash", "")

    @property
    def task(self) -> str:
        return self.data["task"]

    @property
    def records(self) -> list[dict]:
        return self.data["records"]

    def split(self, name: str) -> list[dict]:
        return [r for r in self.records if r["split"] == name]


def load_manifest(path) -> Manifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    data = json.loads(path.read_text())
    if data.get("format") != "gazeattn-manifest":
        raise ValueError(f"{path}: not a dataset manifest")
    return Manifest(path, data)


def select_subset(records: Sequence[dict], ratio: float, seed: int) -> list[dict]:
    """Deterministic ``ratio`` share of ``records``.

    One permutation per seed is drawn and its prefix taken, so smaller
    ratios give subsets of larger ones and every variant sees the same
    records for a given seed.
    """
    if not 0 < ratio <= 1:
        raise ValueError("ratio must lie in (0, 1]")
    records = sorted(records, key=lambda r: r["id"])
    if not records:
        return []
    order = np.random.default_rng([int(seed), 7]).permutation(len(records))
    k = max(1, int(math.floor(ratio * len(records) + 0.5)))
    return [records[i] for i in sorted(order[:k])]


@dataclass
class TensorSet:
    ids: list[str]
    images: torch.Tensor  # (B, C, D, W, H)
    masks: Optional[torch.Tensor]  # (B, N, D, W, H)
    labels: Optional[torch.Tensor]  # (B, K)
    gaze: Optional[torch.Tensor]  # (B, 1, d, w, h) target of the gaze output
    gaze_flag: torch.Tensor  # (B,) bool: sample contributes to the gaze loss

    def __len__(self) -> int:
        return len(self.ids)

    def batch(self, idx) -> "TensorSet":
        idx = torch.as_tensor(idx, dtype=torch.long)
        pick = lambda t: None if t is None else t[idx]  # noqa: E731
        return TensorSet([self.ids[i] for i in idx.tolist()], self.images[idx], pick(self.masks),
                         pick(self.labels), pick(self.gaze), self.gaze_flag[idx])


def load_tensors(
    manifest: Manifest,
    records: Sequence[dict],
    supervision: Optional[str] = None,
    gaze_scale: int = 16,
    gaze_source: str = "expert",
    kernel_size: int = 10,
) -> TensorSet:
    """Read records into memory.

    ``supervision`` is ``"gaze"`` (fixation files of ``has_gaze`` records),
    ``"mask"`` (max-pooled union of the ground-truth regions, every record)
    or ``None``. Fixation files of records without ``has_gaze`` are never
    opened.
    """
    root = manifest.root
    images, masks, labels, gaze, flags = [], [], [], [], []
    for r in records:
        vol = read_volume(root / r["image"])
        images.append(vol.data)
        mask = read_mask(root / r["mask"]).data if r.get("mask") else None
        if mask is not None:
            masks.append(mask)
        if r.get("labels") is not None:
            labels.append(np.asarray(r["labels"], dtype=np.float32))
        if supervision is None:
            continue
        target = None
        if supervision == "mask":
            if mask is None:
                raise ValueError(f"record {r['id']} has no mask for mask-supervised gaze")
            target = block_max_pool(mask.max(axis=0), gaze_scale)
        elif r.get("has_gaze"):
            fix_path = root / r["fixations"][gaze_source]
            fix = read_fixations(fix_path, shape=vol.shape)
            target = gaze_target(fix, vol.shape, kernel_size, gaze_scale).data
        flags.append(target is not None)
        gaze.append(target)

    gaze_t = None
    if supervision is not None:
        shape = next((g.shape for g in gaze if g is not None), None)
        if shape is None:
            gaze_t = None
        else:
            gaze_t = torch.from_numpy(np.stack([g if g is not None else np.zeros(shape, np.float32)
                                                for g in gaze])[:, None].astype(np.float32))
    return TensorSet(
        ids=[r["id"] for r in records],
        images=torch.from_numpy(np.stack(images)),
        masks=torch.from_numpy(np.stack(masks)) if len(masks) == len(records) and masks else None,
        labels=torch.from_numpy(np.stack(labels)) if len(labels) == len(records) and labels else None,
        gaze=gaze_t,
        gaze_flag=torch.tensor(flags if supervision is not None else [False] * len(records), dtype=torch.bool),
    )

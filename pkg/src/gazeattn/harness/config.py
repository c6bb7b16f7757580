"""Experiment configuration schema (JSON or YAML on disk)."""
from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator

from ..network import ModelConfig, Variant
from ..objectives import LossWeights

OUTPUT_ROOT_ENV = "GAZEATTN_OUTPUT_ROOT"


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


class ModelOptions(BaseModel):
    """Architecture widths; everything else is derived from the dataset."""

    model_config = ConfigDict(extra="forbid")

    base_channels: int = 8
    num_pool_stages: int = 3
    san_channels: tuple[int, int] = (16, 32)
    san_norm_groups: int = 8
    san_input_downsample: int = 4
    hidden_dim: int = 64
    num_heads: int = 4
    ffn_dim: int = 128

    def build(self, in_channels: int, spatial_rank: int, task: str,
              num_regions: int = 3, num_classes: int = 5) -> ModelConfig:
        return ModelConfig.for_input(
            in_channels, spatial_rank, task,
            backbone=dict(base_channels=self.base_channels, num_pool_stages=self.num_pool_stages),
            san=dict(group_channels=tuple(self.san_channels), norm_groups=self.san_norm_groups,
                     input_downsample=self.san_input_downsample),
            aab=dict(hidden_dim=self.hidden_dim, num_heads=self.num_heads, ffn_dim=self.ffn_dim),
            num_regions=num_regions,
            num_classes=num_classes,
        )


class LossOptions(BaseModel):
    model_config = ConfigDict(extra="forbid")

    w1: float = Field(1.0, ge=0)
    w2: float = Field(0.5, ge=0)
    w_aux: float = Field(0.5, ge=0)
    smoothing_eps: float = Field(1e-5, gt=0)
    bce_clamp: float = Field(1e-7, gt=0)

    def weights(self) -> LossWeights:
        return LossWeights(**self.model_dump())


class ExperimentConfig(BaseModel):
    """One training run. ``seeds[0]`` is used by ``train``; sweeps use all."""

    model_config = ConfigDict(extra="forbid")

    variant: Variant = Variant.OURS
    manifest: str
    data_ratio: float = Field(1.0, gt=0, le=1)
    epochs: int = Field(60, ge=1)
    lr: float = Field(2e-3, gt=0)
    lr_schedule: Literal["constant", "cosine_after"] = "cosine_after"
    warm_epochs: int = Field(30, ge=0)
    optimizer: Literal["adam", "ranger"] = "adam"
    lookahead_k: int = Field(5, ge=1)
    lookahead_alpha: float = Field(0.5, gt=0, le=1)
    loss: LossOptions = Field(default_factory=LossOptions)
    seeds: list[int] = Field(default_factory=lambda: [0], min_length=1)
    batch_size: int = Field(2, ge=1)
    eval_every: int = Field(5, ge=1)
    gaze_source: Literal["expert", "nonexpert"] = "expert"
    gaze_kernel_size: int = Field(10, ge=1)
    augment_flip: bool = False
    model: ModelOptions = Field(default_factory=ModelOptions)
    output_dir: Optional[str] = None

    @field_validator("seeds")
    @classmethod
    def _unique_seeds(cls, v):
        if len(set(v)) != len(v):
            raise ValueError("seeds must be unique")
        return v

    def fingerprint(self, manifest_hash: str = "") -> str:
        body = self.model_dump(mode="json", exclude={"output_dir", "seeds"})
        body["manifest"] = manifest_hash or body["manifest"]
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]


def load_config(path, **overrides) -> ExperimentConfig:
    text = Path(path).read_text()
    data = yaml.safe_load(text) if str(path).endswith((".yaml", ".yml")) else json.loads(text)
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.model_validate(data)

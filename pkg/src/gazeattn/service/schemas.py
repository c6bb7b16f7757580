"""Request/response models shared by the HTTP service and the CLI."""
from __future__ import annotations

from typing import Any, Literal, Optional

from pydantic import BaseModel, Field

from ..harness.config import ExperimentConfig
from ..network import Variant


class MakeDataRequest(BaseModel):
    n: int = Field(200, ge=1)
    shape: tuple[int, int, int] = (32, 32, 32)
    channels: Optional[int] = None  # default 4 in 3D, 1 in 2D
    seed: int = 0
    gaze_ratio: float = Field(0.5, ge=0, le=1)
    mode: Literal["3d", "2d"] = "3d"
    out_dir: str


class MakeDataResponse(BaseModel):
    manifest: str
    hash: str
    n_records: int
    splits: dict[str, int]
    with_gaze: int


class GazePrepRequest(BaseModel):
    fixations: str
    volume: str  # header of the volume (or mask) that defines the grid
    output: str
    kernel_size: int = Field(10, ge=1)
    downsample: int = Field(16, ge=1)
    raw: bool = False  # run saccade filtering first
    velocity_threshold: float = Field(30.0, gt=0)
    min_fixation_duration: float = Field(100.0, gt=0)


class GazePrepResponse(BaseModel):
    output: str
    shape: tuple[int, int, int]
    n_fixations: int
    max_value: float


class TrainRequest(BaseModel):
    config: ExperimentConfig
    seed: Optional[int] = None


class TrainResponse(BaseModel):
    run_dir: str
    checkpoint: str
    fingerprint: str
    seed: int
    best_epoch: int
    best_metric: Optional[float]
    final: dict[str, Any]
    model_summary: dict[str, Any]


class EvalRequest(BaseModel):
    checkpoint: str
    split: str = "test"
    manifest: Optional[str] = None
    output: Optional[str] = None


class SweepRequest(BaseModel):
    config: ExperimentConfig
    ratios: list[float] = [0.2, 0.3, 0.5, 0.7]
    variants: list[Variant] = [Variant.BACKBONE, Variant.OURS]
    seeds: list[int] = [0, 1, 2]
    gaze_sources: list[Literal["expert", "nonexpert"]] = ["expert"]
    split: str = "test"
    out_dir: Optional[str] = None


class SweepResponse(BaseModel):
    out_dir: str
    table: list[dict[str, Any]]
    markdown: str


class ReportRequest(BaseModel):
    path: str


class ReportResponse(BaseModel):
    kind: Literal["sweep", "metrics"]
    text: str


class SummaryRequest(BaseModel):
    variant: Variant = Variant.OURS
    manifest: Optional[str] = None
    in_channels: int = 4
    spatial_rank: Literal[2, 3] = 3
    task: Literal["segmentation", "classification"] = "segmentation"


class JobStatus(BaseModel):
    id: str
    kind: str
    state: Literal["queued", "running", "done", "failed"]
    result: Optional[dict[str, Any]] = None
    error: Optional[str] = None

"""Backbone encoder, task heads and the ablation variants."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Literal, Optional

import torch
import torch.nn.functional as F
from torch import nn

from .aab import AabConfig, AuxiliaryAttentionBlock
from .san import ConvBlock, SanConfig, SelectiveAttentionNetwork, conv, kernel


class Variant(str, enum.Enum):
    BACKBONE = "backbone"
    GAZE_HEAD_ONLY = "gaze_head_only"  # +gaze*
    SAN_CONCAT = "san_concat"  # +SAN*
    OURS_NO_GAZE = "ours_no_gaze"  # ours-gaze
    OURS = "ours"
    OURS_MULTITASK = "ours_multitask"  # ours+surv

    @property
    def has_san(self) -> bool:
        return self in (Variant.SAN_CONCAT, Variant.OURS_NO_GAZE, Variant.OURS, Variant.OURS_MULTITASK)

    @property
    def has_aab(self) -> bool:
        return self in (Variant.OURS_NO_GAZE, Variant.OURS, Variant.OURS_MULTITASK)

    @property
    def predicts_gaze(self) -> bool:
        return self is not Variant.BACKBONE

    @property
    def gaze_supervision(self) -> Optional[str]:
        """``"gaze"``, ``"mask"`` or ``None``: what the gaze output is trained on."""
        if self is Variant.BACKBONE:
            return None
        if self is Variant.OURS_NO_GAZE:
            return "mask"
        return "gaze"


@dataclass(frozen=True)
class BackboneConfig:
    in_channels: int = 4
    base_channels: int = 8
    num_pool_stages: int = 3
    spatial_rank: int = 3
    norm_groups: int = 4

    @property
    def encoder_channels(self) -> int:
        return self.base_channels * 2 ** self.num_pool_stages

    def check_input(self, shape) -> None:
        d, w, h = shape
        f = 2 ** self.num_pool_stages
        fd = 1 if self.spatial_rank == 2 else f
        if self.spatial_rank == 2 and d != 1:
            raise ValueError(f"2D backbone needs depth 1, got {d}")
        if d % fd or w % f or h % f:
            raise ValueError(f"input {tuple(shape)} not divisible by 2^{self.num_pool_stages}")


class Encoder(nn.Module):
    """``num_pool_stages`` conv blocks, each followed by stride-2 max pooling,
    and a bottleneck block producing E4."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        r, b = cfg.spatial_rank, cfg.base_channels
        chans = [b * 2 ** i for i in range(cfg.num_pool_stages + 1)]
        self.blocks = nn.ModuleList(
            ConvBlock(cfg.in_channels if i == 0 else chans[i - 1], chans[i], r, cfg.norm_groups)
            for i in range(cfg.num_pool_stages)
        )
        self.pool = nn.MaxPool3d(kernel(r, 2), stride=kernel(r, 2))
        self.bottleneck = ConvBlock(chans[-2], chans[-1], r, cfg.norm_groups)

    def forward(self, x):
        self.cfg.check_input(x.shape[-3:])
        skips = []
        for block in self.blocks:
            x = block(x)
            skips.append(x)
            x = self.pool(x)
        return self.bottleneck(x), skips


class SegmentationHead(nn.Module):
    """UNet decoder: nearest upsample, skip concat, conv block per stage, then
    a 1x1 conv to ``num_regions`` logits."""

    def __init__(self, cfg: BackboneConfig, num_regions: int):
        super().__init__()
        r, b = cfg.spatial_rank, cfg.base_channels
        chans = [b * 2 ** i for i in range(cfg.num_pool_stages + 1)]
        self.stages = nn.ModuleList(
            ConvBlock(chans[i + 1] + chans[i], chans[i], r, cfg.norm_groups)
            for i in reversed(range(cfg.num_pool_stages))
        )
        self.final = conv(chans[0], num_regions, r, k=1)

    def forward(self, e4, skips):
        x = e4
        for stage, skip in zip(self.stages, reversed(skips)):
            if any(s < t or s % t for s, t in zip(skip.shape[-3:], x.shape[-3:])):
                raise ValueError(f"skip shape {tuple(skip.shape)} incompatible with {tuple(x.shape)}")
            x = F.interpolate(x, size=skip.shape[-3:], mode="nearest")
            x = stage(torch.cat([x, skip], dim=1))
        return self.final(x)


class ClassificationHead(nn.Module):
    """Global average pool -> linear -> sigmoid (multi-label) or softmax."""

    def __init__(self, in_channels: int, num_classes: int, activation: Literal["sigmoid", "softmax"]):
        super().__init__()
        self.activation = activation
        self.linear = nn.Linear(in_channels, num_classes)

    def forward(self, e4):
        logits = self.linear(e4.mean(dim=(-3, -2, -1)))
        if self.activation == "softmax":
            return logits, torch.softmax(logits, dim=-1)
        return logits, torch.sigmoid(logits)


@dataclass(frozen=True)
class ModelConfig:
    task: Literal["segmentation", "classification"] = "segmentation"
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    san: SanConfig = field(default_factory=SanConfig)
    aab: AabConfig = field(default_factory=AabConfig)
    num_regions: int = 3
    num_classes: int = 5  # multi-label classification mode
    survival_classes: int = 3  # auxiliary head of OURS_MULTITASK

    @classmethod
    def for_input(cls, in_channels: int, spatial_rank: int, task: str = "segmentation", **kw) -> "ModelConfig":
        """Consistent defaults for a given input channel count and rank."""
        backbone = BackboneConfig(in_channels=in_channels, spatial_rank=spatial_rank,
                                  **kw.pop("backbone", {}))
        san = SanConfig(in_channels=in_channels, spatial_rank=spatial_rank, **kw.pop("san", {}))
        aab_kw = dict(encoder_channels=backbone.encoder_channels, san_channels=san.group_channels[1])
        aab_kw.update(kw.pop("aab", {}))
        return cls(task=task, backbone=backbone, san=san, aab=AabConfig(**aab_kw), **kw)

    def validate(self, variant: Variant) -> None:
        b, s, a = self.backbone, self.san, self.aab
        if b.in_channels != s.in_channels or b.spatial_rank != s.spatial_rank:
            raise ValueError("backbone and SAN disagree on input channels or spatial rank")
        if variant.has_aab and (a.encoder_channels != b.encoder_channels or a.san_channels != s.group_channels[1]):
            raise ValueError("AAB channel counts do not match backbone/SAN outputs")
        if variant is Variant.OURS_MULTITASK and self.task != "segmentation":
            raise ValueError("the multi-task variant adds a survival head to segmentation only")


@dataclass
class ModelOutput:
    logits: torch.Tensor  # segmentation logits (B,N,D,W,H) or class logits (B,K)
    probs: torch.Tensor
    gaze: Optional[torch.Tensor] = None  # (B,1,d,w,h)
    aux_logits: Optional[torch.Tensor] = None
    aux_probs: Optional[torch.Tensor] = None


class GazeModel(nn.Module):
    """One of the ablation wirings around a shared encoder and task head."""

    def __init__(self, variant: Variant, cfg: ModelConfig):
        super().__init__()
        variant = Variant(variant)
        cfg.validate(variant)
        self.variant, self.cfg = variant, cfg
        b = cfg.backbone
        r = b.spatial_rank
        c_e = b.encoder_channels
        self.encoder = Encoder(b)
        if cfg.task == "segmentation":
            self.head = SegmentationHead(b, cfg.num_regions)
        else:
            self.head = ClassificationHead(c_e, cfg.num_classes, "sigmoid")

        self.san = SelectiveAttentionNetwork(cfg.san) if variant.has_san else None
        self.aab = AuxiliaryAttentionBlock(cfg.aab) if variant.has_aab else None
        self.fuse = None
        if variant is Variant.SAN_CONCAT:
            self.fuse = conv(c_e + cfg.san.group_channels[1], c_e, r, k=1)
        self.gaze_head = None
        if variant is Variant.GAZE_HEAD_ONLY:
            self.gaze_head = conv(c_e, 1, r, k=1)
            self.gaze_pool = nn.MaxPool3d(kernel(r, 2), stride=kernel(r, 2))
        self.aux_head = None
        if variant is Variant.OURS_MULTITASK:
            self.aux_head = ClassificationHead(c_e, cfg.survival_classes, "softmax")

    def gaze_scale(self) -> int:
        """Spatial downsampling between the input and the gaze output."""
        if self.san is not None:
            return self.cfg.san.input_downsample * 4
        return 2 ** (self.cfg.backbone.num_pool_stages + 1)

    def forward(self, x: torch.Tensor) -> ModelOutput:
        e4, skips = self.encoder(x)
        gaze = None
        if self.gaze_head is not None:
            gaze = torch.sigmoid(self.gaze_head(self.gaze_pool(e4)))
            if not self.training:
                up = F.interpolate(gaze, size=e4.shape[-3:], mode="nearest")
                e4 = e4 * (1 + up)
        if self.san is not None:
            _, m2, gaze = self.san(x)
            if self.aab is not None:
                e4 = self.aab(e4, m2)
            else:
                up = F.interpolate(m2, size=e4.shape[-3:], mode="nearest")
                e4 = self.fuse(torch.cat([e4, up], dim=1))

        if self.cfg.task == "segmentation":
            logits = self.head(e4, skips)
            out = ModelOutput(logits, torch.sigmoid(logits), gaze)
        else:
            logits, probs = self.head(e4)
            out = ModelOutput(logits, probs, gaze)
        if self.aux_head is not None:
            out.aux_logits, out.aux_probs = self.aux_head(e4)
        return out

    def summary(self) -> dict:
        parts = {name: sum(p.numel() for p in mod.parameters())
                 for name, mod in self.named_children()}
        parts = {k: v for k, v in parts.items() if v}
        return {
            "variant": self.variant.value,
            "task": self.cfg.task,
            "parameters": parts,
            "total_parameters": sum(parts.values()),
        }


def assemble_model(variant, cfg: ModelConfig = ModelConfig()) -> GazeModel:
    return GazeModel(Variant(variant), cfg)


def shared_weights_copy(src: GazeModel, dst: GazeModel) -> None:
    """Copy encoder and task-head weights from ``src`` into ``dst``."""
    dst.encoder.load_state_dict(src.encoder.state_dict())
    dst.head.load_state_dict(src.head.state_dict())

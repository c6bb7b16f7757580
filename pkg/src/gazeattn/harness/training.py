"""Training loop, evaluation and metrics reports."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from pydantic import BaseModel

from ..network import GazeModel, ModelOutput, Variant, assemble_model
from ..objectives import (
    LossWeights,
    auroc,
    classification_ce_loss,
    dice_loss,
    gaze_bce_loss,
    hard_dice,
    hausdorff95,
    joint_loss,
)
from .checkpoint import load_model, save_checkpoint
from .config import ExperimentConfig, output_root
from .data import Manifest, TensorSet, load_manifest, load_tensors, select_subset
from .optim import lr_at, make_optimizer, set_lr

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


class MetricsReport(BaseModel):
    """Evaluation of one checkpoint on one split. Contains no gaze data."""

    config_fingerprint: str
    variant: str
    task: str
    split: str
    n_records: int
    per_record: list[dict]
    aggregate: dict[str, dict[str, dict[str, float]]]
    summary: dict[str, float]
    flags: list[str] = []


@dataclass
class TrainResult:
    run_dir: Path
    checkpoint: Path
    log: list[dict]
    best_epoch: int
    best_metric: Optional[float]
    fingerprint: str
    seed: int
    model: GazeModel = field(repr=False)


def build_model(cfg: ExperimentConfig, manifest: Manifest, seed: int) -> GazeModel:
    torch.manual_seed(seed)
    data = manifest.data
    d = data["shape"][0]
    task = data["task"]
    model_cfg = cfg.model.build(
        in_channels=data["channels"],
        spatial_rank=2 if d == 1 else 3,
        task=task,
        num_regions=len(data.get("regions", [])) or 3,
        num_classes=len(data.get("label_names", [])) or 5,
    )
    return assemble_model(cfg.variant, model_cfg)


def _losses(model: GazeModel, out: ModelOutput, batch: TensorSet, weights: LossWeights):
    if model.cfg.task == "segmentation":
        task = dice_loss(out.probs, batch.masks, weights)
    else:
        task = classification_ce_loss(out.probs, batch.labels, "multilabel", weights.bce_clamp)

    gaze = torch.zeros((), dtype=out.probs.dtype)
    if model.variant.gaze_supervision and batch.gaze is not None and batch.gaze_flag.any():
        per_sample = gaze_bce_loss(out.gaze, batch.gaze, weights.bce_clamp, per_sample=True)
        gaze = per_sample[batch.gaze_flag].mean()

    total = joint_loss(task, gaze, weights)
    aux = None
    if out.aux_probs is not None:
        aux = classification_ce_loss(out.aux_probs, batch.labels, "softmax", weights.bce_clamp)
        total = total + weights.w_aux * aux
    return total, task, gaze, aux


def _flip(batch: TensorSet, rng: np.random.Generator) -> TensorSet:
    if rng.random() < 0.5:
        return batch
    flip = lambda t: None if t is None else torch.flip(t, dims=(-2,))  # noqa: E731
    return TensorSet(batch.ids, flip(batch.images), flip(batch.masks), batch.labels,
                     flip(batch.gaze), batch.gaze_flag)


@torch.no_grad()
def predict(model: GazeModel, images: torch.Tensor, batch_size: int = 4) -> list[ModelOutput]:
    model.eval()
    outs = []
    for i in range(0, len(images), batch_size):
        outs.append(model(images[i:i + batch_size]))
    return outs


def _selection_metric(model: GazeModel, data: TensorSet) -> float:
    """Mean hard dice (segmentation) or mean AUROC (classification)."""
    outs = predict(model, data.images)
    probs = torch.cat([o.probs for o in outs]).numpy()
    if model.cfg.task == "segmentation":
        masks = data.masks.numpy()
        return float(np.mean([hard_dice(p > 0.5, m > 0.5) for pr, mk in zip(probs, masks)
                              for p, m in zip(pr, mk)]))
    labels = data.labels.numpy()
    scores = [auroc(probs[:, k], labels[:, k]) for k in range(labels.shape[1])]
    scores = [s for s in scores if s is not None]
    return float(np.mean(scores)) if scores else 0.0


def train(cfg: ExperimentConfig, seed: Optional[int] = None, run_dir=None,
          train_records: Optional[list[dict]] = None) -> TrainResult:
    """Train one model and keep the checkpoint with the best validation metric.

    Without validation records the final epoch is kept.
    """
    seed = cfg.seeds[0] if seed is None else seed
    manifest = load_manifest(cfg.manifest)
    fingerprint = cfg.fingerprint(manifest.hash)
    torch.use_deterministic_algorithms(True)

    model = build_model(cfg, manifest, seed)
    variant = model.variant
    supervision = variant.gaze_supervision
    if train_records is None:
        train_records = select_subset(manifest.split("train"), cfg.data_ratio, seed)
    if not train_records:
        raise TrainingError("no training records selected")
    if supervision == "gaze" and not any(r.get("has_gaze") for r in train_records):
        raise TrainingError(f"variant {variant.value} needs gaze but no selected training record has gaze")
    if model.cfg.task == "segmentation" and any(not r.get("mask") for r in train_records):
        raise TrainingError("segmentation training needs masks on every record")
    if (variant is Variant.OURS_MULTITASK or model.cfg.task == "classification") and \
            any(r.get("labels") is None for r in train_records):
        raise TrainingError("classification heads need labels on every record")

    train_set = load_tensors(manifest, train_records, supervision, model.gaze_scale(),
                             cfg.gaze_source, cfg.gaze_kernel_size)
    val_set = load_tensors(manifest, manifest.split("val")) if manifest.split("val") else None

    weights = cfg.loss.weights()
    optimizer = make_optimizer(model.parameters(), cfg.optimizer, cfg.lr, cfg.lookahead_k, cfg.lookahead_alpha)
    rng = np.random.default_rng([int(seed), 11])

    if run_dir is None:
        base = Path(cfg.output_dir) if cfg.output_dir else output_root()
        run_dir = base / f"{variant.value}-{fingerprint}-s{seed}"
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(cfg.model_dump_json(indent=2) + "\n")

    meta = {"fingerprint": fingerprint, "seed": seed, "manifest_hash": manifest.hash,
            "train_ids": train_set.ids, "experiment_config": cfg.model_dump(mode="json")}
    history: list[dict] = []
    best_metric, best_epoch = None, -1
    ckpt_path = run_dir / "checkpoint.json"
    n = len(train_set)
    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg.lr, cfg.epochs, cfg.lr_schedule, cfg.warm_epochs)
        set_lr(optimizer, lr)
        model.train()
        order = rng.permutation(n)
        sums = {"loss": 0.0, "task_loss": 0.0, "gaze_loss": 0.0, "aux_loss": 0.0}
        n_batches = 0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            batch = train_set.batch(order[start:start + cfg.batch_size])
            if cfg.augment_flip:
                batch = _flip(batch, rng)
            optimizer.zero_grad()
            out = model(batch.images)
            total, task, gaze, aux = _losses(model, out, batch, weights)
            if not torch.isfinite(total):
                raise TrainingError(f"non-finite loss at epoch {epoch} batch {b} (records {batch.ids})")
            total.backward()
            optimizer.step()
            sums["loss"] += total.item()
            sums["task_loss"] += task.item()
            sums["gaze_loss"] += float(gaze.detach())
            sums["aux_loss"] += float(aux.detach()) if aux is not None else 0.0
            n_batches += 1
        entry = {"epoch": epoch, "lr": lr, **{k: v / n_batches for k, v in sums.items()}}

        last = epoch == cfg.epochs - 1
        if (epoch + 1) % cfg.eval_every == 0 or last:
            if val_set is not None:
                metric = _selection_metric(model, val_set)
                entry["val_metric"] = metric
                if best_metric is None or metric > best_metric:
                    best_metric, best_epoch = metric, epoch
                    save_checkpoint(run_dir, model, optimizer,
                                    {**meta, "epoch": epoch, "best_metric": metric})
            elif last:
                best_epoch = epoch
                save_checkpoint(run_dir, model, optimizer, {**meta, "epoch": epoch, "best_metric": None})
        history.append(entry)
        log.debug("epoch %d %s", epoch, entry)

    with open(run_dir / "log.jsonl", "w") as fh:
        for entry in history:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    best_model, _ = load_model(ckpt_path)
    return TrainResult(run_dir, ckpt_path, history, best_epoch, best_metric, fingerprint, seed, best_model)


def _mean_std(values) -> dict[str, float]:
    values = np.asarray([v for v in values if v is not None], dtype=np.float64)
    if values.size == 0:
        return {"mean": float("nan"), "std": float("nan"), "n": 0}
    return {"mean": float(values.mean()), "std": float(values.std()), "n": int(values.size)}


def evaluate(checkpoint, split: str = "test", manifest_path=None) -> MetricsReport:
    """Score a checkpoint on a manifest split; gaze is never read."""
    model, header = load_model(checkpoint)
    manifest = load_manifest(manifest_path or header["experiment_config"]["manifest"])
    records = manifest.split(split)
    if not records:
        raise ValueError(f"split {split!r} is empty")
    data = load_tensors(manifest, records)
    outs = predict(model, data.images)
    probs = torch.cat([o.probs for o in outs]).numpy()
    task = model.cfg.task
    per_record, flags = [], []
    aggregate: dict[str, dict[str, dict[str, float]]] = {}
    summary: dict[str, float] = {}

    if task == "segmentation":
        names = manifest.data.get("regions") or [f"region{i}" for i in range(probs.shape[1])]
        masks = data.masks.numpy() > 0.5
        pred = probs > 0.5
        for i, rid in enumerate(data.ids):
            rec = {"id": rid, "dice": {}, "hd95": {}}
            for n, name in enumerate(names):
                rec["dice"][name] = hard_dice(pred[i, n], masks[i, n])
                rec["hd95"][name] = hausdorff95(pred[i, n], masks[i, n])
                if not pred[i, n].any() or not masks[i, n].any():
                    flags.append(f"{rid}:{name}:empty-mask-hd95-sentinel")
            per_record.append(rec)
        for metric in ("dice", "hd95"):
            aggregate[metric] = {name: _mean_std(r[metric][name] for r in per_record) for name in names}
        summary["mean_dice"] = float(np.mean([aggregate["dice"][n]["mean"] for n in names]))
        summary["mean_hd95"] = float(np.mean([aggregate["hd95"][n]["mean"] for n in names]))
    else:
        names = manifest.data.get("label_names") or [f"class{k}" for k in range(probs.shape[1])]
        labels = data.labels.numpy()
        for i, rid in enumerate(data.ids):
            per_record.append({"id": rid, "probs": {n: float(probs[i, k]) for k, n in enumerate(names)}})
        scores = {}
        for k, name in enumerate(names):
            s = auroc(probs[:, k], labels[:, k])
            if s is None:
                flags.append(f"{name}:single-class-auroc-absent")
            else:
                scores[name] = {"mean": s, "std": 0.0, "n": len(records)}
        aggregate["auroc"] = scores
        summary["mean_auroc"] = float(np.mean([v["mean"] for v in scores.values()])) if scores else float("nan")

    return MetricsReport(
        config_fingerprint=header["fingerprint"],
        variant=header["variant"],
        task=task,
        split=split,
        n_records=len(records),
        per_record=per_record,
        aggregate=aggregate,
        summary=summary,
        flags=flags,
    )

"""Ratio x variant x seed sweeps and their comparison tables."""
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..network import Variant
from .config import ExperimentConfig, output_root
from .data import load_manifest, select_subset
from .training import evaluate, train

log = logging.getLogger(__name__)


def row_label(variant: Variant, gaze_source: str, multi_source: bool) -> str:
    label = Variant(variant).value
    if multi_source and Variant(variant).gaze_supervision == "gaze":
        label += f"[{gaze_source}]"
    return label


def sweep(
    base_cfg: ExperimentConfig,
    ratios: Sequence[float],
    variants: Sequence,
    seeds: Sequence[int],
    gaze_sources: Sequence[str] = ("expert",),
    split: str = "test",
    out_dir=None,
) -> dict:
    """Train every (gaze source, variant, ratio, seed) combination and tabulate.

    Variants that do not consume gaze are trained once regardless of how many
    gaze sources are requested. The training subset depends only on (ratio,
    seed), so all variants in a cell see identical records.
    """
    manifest = load_manifest(base_cfg.manifest)
    out_dir = Path(out_dir) if out_dir else Path(base_cfg.output_dir or output_root()) / "sweep"
    multi = len(gaze_sources) > 1
    runs = []
    for source in gaze_sources:
        for variant in map(Variant, variants):
            if variant.gaze_supervision != "gaze" and source != gaze_sources[0]:
                continue
            for ratio in ratios:
                for seed in seeds:
                    cfg = base_cfg.model_copy(update={
                        "variant": variant, "data_ratio": ratio, "seeds": [seed], "gaze_source": source,
                    })
                    subset = select_subset(manifest.split("train"), ratio, seed)
                    label = row_label(variant, source, multi)
                    run_dir = out_dir / f"{label}-r{ratio:g}-s{seed}"
                    log.info("training %s ratio=%g seed=%d (%d records)", label, ratio, seed, len(subset))
                    result = train(cfg, seed=seed, run_dir=run_dir, train_records=subset)
                    report = evaluate(result.checkpoint, split, base_cfg.manifest)
                    (run_dir / f"metrics_{split}.json").write_text(report.model_dump_json(indent=2) + "\n")
                    runs.append({
                        "label": label, "variant": variant.value, "gaze_source": source,
                        "ratio": ratio, "seed": seed, "n_train": len(subset),
                        "train_ids": [r["id"] for r in subset],
                        "run_dir": str(run_dir), "aggregate": report.aggregate, "summary": report.summary,
                    })
    table = comparison_table(runs, manifest.task)
    result = {"task": manifest.task, "split": split, "ratios": list(ratios), "seeds": list(seeds),
              "gaze_sources": list(gaze_sources), "runs": runs, "table": table}
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "sweep.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    (out_dir / "sweep.md").write_text(render_table(result) + "\n")
    return result


def comparison_table(runs: list[dict], task: str) -> list[dict]:
    """One row per label; cells hold mean and std across seeds."""
    metric = "dice" if task == "segmentation" else "auroc"
    rows: dict[str, dict] = {}
    for run in runs:
        row = rows.setdefault(run["label"], {"label": run["label"], "cells": {}})
        for name, stats in run["aggregate"][metric].items():
            row["cells"].setdefault(f"{name}@{run['ratio']:g}", []).append(stats["mean"])
        key = "mean_dice" if task == "segmentation" else "mean_auroc"
        row["cells"].setdefault(f"mean@{run['ratio']:g}", []).append(run["summary"][key])
    out = []
    for row in rows.values():
        cells = {k: {"mean": float(np.mean(v)), "std": float(np.std(v)), "n": len(v)}
                 for k, v in row["cells"].items()}
        out.append({"label": row["label"], "cells": cells})
    return out


def render_table(result: dict) -> str:
    """Markdown table in the layout of a region x ratio comparison."""
    table = result["table"]
    if not table:
        return "(empty sweep)"
    columns = list(table[0]["cells"].keys())
    for row in table[1:]:
        columns += [c for c in row["cells"] if c not in columns]
    metric = "Dice" if result["task"] == "segmentation" else "AUROC"
    lines = [f"{metric} (%) on split '{result['split']}', mean (std) over seeds {result['seeds']}", "",
             "| method | " + " | ".join(columns) + " |",
             "|---|" + "---|" * len(columns)]
    for row in table:
        cells = []
        for c in columns:
            s = row["cells"].get(c)
            cells.append("" if s is None else f"{100 * s['mean']:.2f} ({100 * s['std']:.2f})")
        lines.append(f"| {row['label']} | " + " | ".join(cells) + " |")
    return "\n".join(lines)


def cell_mean(result: dict, label: str, column: str) -> Optional[float]:
    for row in result["table"]:
        if row["label"] == label and column in row["cells"]:
            return row["cells"][column]["mean"]
    return None

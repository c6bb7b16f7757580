"""Operations behind both the HTTP routes and the in-process CLI."""
from __future__ import annotations

import json
from pathlib import Path

from ..data_model import read_fixations, read_shape, write_gaze_map
from ..gaze_processing import FixationFilterConfig, filter_fixations, gaze_target
from ..harness.config import ModelOptions, output_root
from ..harness.data import load_manifest
from ..harness.sweep import render_table, sweep
from ..harness.training import MetricsReport, evaluate, train
from ..network import assemble_model
from ..synthetic import GazeSimConfig, PhantomConfig, build_dataset
from . import schemas as s


def make_data(req: s.MakeDataRequest) -> s.MakeDataResponse:
    shape = tuple(req.shape)
    if req.mode == "2d":
        shape = (1, shape[1], shape[2])
    channels = req.channels or (1 if req.mode == "2d" else 4)
    manifest = build_dataset(req.n, PhantomConfig(shape=shape, channels=channels, seed=req.seed),
                             GazeSimConfig(), req.out_dir, gaze_ratio=req.gaze_ratio)
    splits: dict[str, int] = {}
    for r in manifest["records"]:
        splits[r["split"]] = splits.get(r["split"], 0) + 1
    return s.MakeDataResponse(
        manifest=str(Path(req.out_dir) / "manifest.json"),
        hash=manifest["hash"],
        n_records=len(manifest["records"]),
        splits=splits,
        with_gaze=sum(r["has_gaze"] for r in manifest["records"]),
    )


def gaze_prep(req: s.GazePrepRequest) -> s.GazePrepResponse:
    shape = read_shape(req.volume)
    fixations = read_fixations(req.fixations, shape=shape, kind="raw" if req.raw else "fixation")
    if req.raw:
        fixations = filter_fixations(fixations, FixationFilterConfig(req.velocity_threshold,
                                                                     req.min_fixation_duration))
    gaze = gaze_target(fixations, shape, req.kernel_size, req.downsample)
    out = write_gaze_map(gaze, req.output)
    return s.GazePrepResponse(output=str(out), shape=gaze.shape, n_fixations=len(fixations),
                              max_value=float(gaze.data.max()))


def train_run(req: s.TrainRequest) -> s.TrainResponse:
    result = train(req.config, seed=req.seed)
    return s.TrainResponse(
        run_dir=str(result.run_dir),
        checkpoint=str(result.checkpoint),
        fingerprint=result.fingerprint,
        seed=result.seed,
        best_epoch=result.best_epoch,
        best_metric=result.best_metric,
        final=result.log[-1],
        model_summary=result.model.summary(),
    )


def eval_run(req: s.EvalRequest) -> MetricsReport:
    report = evaluate(req.checkpoint, req.split, req.manifest)
    if req.output:
        Path(req.output).parent.mkdir(parents=True, exist_ok=True)
        Path(req.output).write_text(report.model_dump_json(indent=2) + "\n")
    return report


def sweep_run(req: s.SweepRequest) -> s.SweepResponse:
    result = sweep(req.config, req.ratios, req.variants, req.seeds, req.gaze_sources, req.split, req.out_dir)
    out_dir = req.out_dir or str(Path(req.config.output_dir or output_root()) / "sweep")
    return s.SweepResponse(out_dir=out_dir, table=result["table"], markdown=render_table(result))


def report(req: s.ReportRequest) -> s.ReportResponse:
    data = json.loads(Path(req.path).read_text())
    if "table" in data and "runs" in data:
        return s.ReportResponse(kind="sweep", text=render_table(data))
    rep = MetricsReport.model_validate(data)
    lines = [f"{rep.variant} on '{rep.split}' ({rep.n_records} records, config {rep.config_fingerprint})"]
    for metric, per_name in rep.aggregate.items():
        for name, st in per_name.items():
            lines.append(f"  {metric:6s} {name:18s} {st['mean']:.4f} (std {st['std']:.4f})")
    for key, value in rep.summary.items():
        lines.append(f"  {key} = {value:.4f}")
    if rep.flags:
        lines.append(f"  flags: {', '.join(rep.flags)}")
    return s.ReportResponse(kind="metrics", text="\n".join(lines))


def summary(req: s.SummaryRequest) -> dict:
    in_channels, rank, task = req.in_channels, req.spatial_rank, req.task
    n_regions, n_classes = 3, 5
    if req.manifest:
        m = load_manifest(req.manifest).data
        in_channels, rank, task = m["channels"], 2 if m["shape"][0] == 1 else 3, m["task"]
        n_regions = len(m.get("regions", [])) or 3
        n_classes = len(m.get("label_names", [])) or 5
    cfg = ModelOptions().build(in_channels, rank, task, n_regions, n_classes)
    return assemble_model(req.variant, cfg).summary()

"""Command-line client.

Every subcommand builds a request model and sends it to the service given by
``--server`` (or ``GAZEATTN_SERVER``); without a server the same handlers run
in-process. Results are printed as JSON, except ``report`` which prints text.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from typing import Optional

from pydantic import BaseModel

from .harness.config import ExperimentConfig, load_config
from .service import handlers
from .service import schemas as s

SERVER_ENV = "GAZEATTN_SERVER"

# route, local handler, runs as a background job on the server
ROUTES = {
    "make-data": ("/make-data", handlers.make_data, False),
    "gaze-prep": ("/gaze-prep", handlers.gaze_prep, False),
    "train": ("/train", handlers.train_run, True),
    "eval": ("/eval", handlers.eval_run, False),
    "sweep": ("/sweep", handlers.sweep_run, True),
    "report": ("/report", handlers.report, False),
    "summary": ("/summary", handlers.summary, False),
}


class Client:
    def __init__(self, server: Optional[str] = None, poll_seconds: float = 2.0, timeout: float = 600.0,
                 http=None):
        self.server = server.rstrip("/") if server else None
        self.poll_seconds = poll_seconds
        self.timeout = timeout
        self.http = http  # preconfigured httpx-compatible client, e.g. for tests

    def call(self, command: str, request: BaseModel) -> dict:
        route, handler, is_job = ROUTES[command]
        if self.server is None and self.http is None:
            result = handler(request)
            return result if isinstance(result, dict) else result.model_dump(mode="json")
        if self.http is not None:
            return self._remote(self.http, command, route, is_job, request)
        import httpx

        with httpx.Client(base_url=self.server, timeout=self.timeout) as http:
            return self._remote(http, command, route, is_job, request)

    def _remote(self, http, command: str, route: str, is_job: bool, request: BaseModel) -> dict:
        resp = http.post(route, json=request.model_dump(mode="json"))
        _raise_for(resp)
        body = resp.json()
        if not is_job:
            return body
        while body["state"] in ("queued", "running"):
            time.sleep(self.poll_seconds)
            resp = http.get(f"/jobs/{body['id']}")
            _raise_for(resp)
            body = resp.json()
        if body["state"] == "failed":
            raise RuntimeError(f"{command} job {body['id']} failed: {body['error']}")
        return body["result"]


def _raise_for(resp) -> None:
    if resp.status_code >= 400:
        raise RuntimeError(f"server error {resp.status_code}: {resp.text}")


def _experiment(args) -> ExperimentConfig:
    overrides = {
        "variant": args.variant, "manifest": args.manifest, "data_ratio": args.ratio,
        "epochs": args.epochs, "lr": args.lr, "optimizer": args.optimizer,
        "gaze_source": args.gaze_source, "output_dir": args.output_dir,
        "batch_size": args.batch_size,
    }
    if args.seed is not None:
        overrides["seeds"] = [args.seed]
    if args.config:
        return load_config(args.config, **overrides)
    return ExperimentConfig.model_validate({k: v for k, v in overrides.items() if v is not None})


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment config file (.json/.yaml)")
    p.add_argument("--manifest", help="dataset manifest.json or its directory")
    p.add_argument("--variant", help="backbone | gaze_head_only | san_concat | ours_no_gaze | ours | ours_multitask")
    p.add_argument("--ratio", type=float, help="share of the training split to use")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--optimizer", choices=["adam", "ranger"])
    p.add_argument("--batch-size", type=int)
    p.add_argument("--gaze-source", choices=["expert", "nonexpert"])
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gazeattn", description=__doc__.splitlines()[0])
    parser.add_argument("--server", default=os.environ.get(SERVER_ENV),
                        help=f"service URL (default: ${SERVER_ENV}; unset runs in-process)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-data", help="generate a synthetic phantom dataset")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--shape", type=int, nargs=3, default=[32, 32, 32], metavar=("D", "W", "H"))
    p.add_argument("--channels", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gaze-ratio", type=float, default=0.5)
    p.add_argument("--mode", choices=["3d", "2d"], default="3d")
    p.add_argument("--out", required=True)

    p = sub.add_parser("gaze-prep", help="build a ground-truth gaze map from a fixation file")
    p.add_argument("--fixations", required=True)
    p.add_argument("--volume", required=True, help="volume header defining the grid")
    p.add_argument("--kernel-size", type=int, default=10)
    p.add_argument("--downsample", type=int, default=16)
    p.add_argument("--raw", action="store_true", help="input is a raw gaze stream; filter saccades first")
    p.add_argument("--velocity-threshold", type=float, default=30.0)
    p.add_argument("--min-duration", type=float, default=100.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train one model")
    _add_experiment_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--manifest")
    p.add_argument("--out")

    p = sub.add_parser("sweep", help="train ratios x variants x seeds and tabulate")
    _add_experiment_flags(p)
    p.add_argument("--ratios", type=float, nargs="+", default=[0.2, 0.3, 0.5, 0.7])
    p.add_argument("--variants", nargs="+", default=["backbone", "ours"])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--gaze-sources", nargs="+", default=["expert"], choices=["expert", "nonexpert"])
    p.add_argument("--split", default="test")
    p.add_argument("--out")

    p = sub.add_parser("report", help="render a sweep.json or metrics report")
    p.add_argument("path")

    p = sub.add_parser("summary", help="per-module parameter counts of a variant")
    p.add_argument("--variant", default="ours")
    p.add_argument("--manifest")
    p.add_argument("--in-channels", type=int, default=4)
    p.add_argument("--rank", type=int, choices=[2, 3], default=3)
    p.add_argument("--task", choices=["segmentation", "classification"], default="segmentation")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


def build_request(args) -> BaseModel:
    c = args.command
    if c == "make-data":
        return s.MakeDataRequest(n=args.n, shape=tuple(args.shape), channels=args.channels, seed=args.seed,
                                 gaze_ratio=args.gaze_ratio, mode=args.mode, out_dir=args.out)
    if c == "gaze-prep":
        return s.GazePrepRequest(fixations=args.fixations, volume=args.volume, output=args.out,
                                 kernel_size=args.kernel_size, downsample=args.downsample, raw=args.raw,
                                 velocity_threshold=args.velocity_threshold,
                                 min_fixation_duration=args.min_duration)
    if c == "train":
        return s.TrainRequest(config=_experiment(args), seed=args.seed)
    if c == "eval":
        return s.EvalRequest(checkpoint=args.checkpoint, split=args.split, manifest=args.manifest,
                             output=args.out)
    if c == "sweep":
        return s.SweepRequest(config=_experiment(args), ratios=args.ratios, variants=args.variants,
                              seeds=args.seeds, gaze_sources=args.gaze_sources, split=args.split,
                              out_dir=args.out)
    if c == "report":
        return s.ReportRequest(path=args.path)
    if c == "summary":
        return s.SummaryRequest(variant=args.variant, manifest=args.manifest, in_channels=args.in_channels,
                                spatial_rank=args.rank, task=args.task)
    raise ValueError(f"unknown command {c}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        uvicorn.run("gazeattn.service.app:app", host=args.host, port=args.port)
        return 0
    try:
        request = build_request(args)
        result = Client(args.server).call(args.command, request)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.command == "report":
        print(result["text"])
    else:
        print(json.dumps(result, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())

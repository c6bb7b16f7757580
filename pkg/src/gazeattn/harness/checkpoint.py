"""Checkpoint container: a JSON header plus one raw float32 payload.

Every tensor (model parameters and buffers, optimizer moments, lookahead
slow weights) is stored little-endian, C-order, back to back; the header
lists name, shape and byte offset for each. Non-tensor optimizer state goes
into the header as JSON.
"""
from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path
from typing import Any, Optional

import numpy as np
import torch

from ..aab import AabConfig
from ..network import BackboneConfig, GazeModel, ModelConfig, Variant
from ..san import SanConfig

HEADER = "checkpoint.json"
PAYLOAD = "checkpoint.raw"


def model_config_to_dict(cfg: ModelConfig) -> dict:
    return json.loads(json.dumps(asdict(cfg)))


def model_config_from_dict(d: dict) -> ModelConfig:
    san = dict(d["san"])
    san["group_channels"] = tuple(san["group_channels"])
    return ModelConfig(
        task=d["task"],
        backbone=BackboneConfig(**d["backbone"]),
        san=SanConfig(**san),
        aab=AabConfig(**d["aab"]),
        num_regions=d["num_regions"],
        num_classes=d["num_classes"],
        survival_classes=d["survival_classes"],
    )


def _split_state(obj, prefix: str, arrays: dict) -> Any:
    """Replace tensors inside a nested state with array references."""
    if isinstance(obj, torch.Tensor):
        if obj.dtype.is_floating_point and obj.dim() > 0:
            arrays[prefix] = obj.detach().cpu().numpy()
            return {"__array__": prefix}
        return {"__scalar__": obj.item()}
    if isinstance(obj, dict):
        return {str(k): _split_state(v, f"{prefix}/{k}", arrays) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_split_state(v, f"{prefix}/{i}", arrays) for i, v in enumerate(obj)]
    return obj


def _join_state(obj, arrays: dict) -> Any:
    if isinstance(obj, dict):
        if "__array__" in obj:
            return torch.from_numpy(arrays[obj["__array__"]].copy())
        if "__scalar__" in obj:
            return torch.tensor(obj["__scalar__"], dtype=torch.float32)
        return {k: _join_state(v, arrays) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_join_state(v, arrays) for v in obj]
    return obj


def _int_keys(state):
    # torch optimizer states are keyed by parameter index
    if isinstance(state, dict) and "state" in state and "param_groups" in state:
        state = dict(state)
        state["state"] = {int(k): v for k, v in state["state"].items()}
        return state
    if isinstance(state, dict) and "inner" in state:
        state = dict(state)
        state["inner"] = _int_keys(state["inner"])
    return state


def save_checkpoint(run_dir, model: GazeModel, optimizer=None, meta: Optional[dict] = None) -> Path:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    arrays: dict[str, np.ndarray] = {}
    for name, t in model.state_dict().items():
        arrays[f"model/{name}"] = t.detach().cpu().numpy()
    opt_state = None
    if optimizer is not None:
        opt_state = _split_state(optimizer.state_dict(), "optimizer", arrays)

    entries, offset = [], 0
    with open(run_dir / PAYLOAD, "wb") as fh:
        for name, arr in arrays.items():
            data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            fh.write(data)
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
            offset += len(data)
    header = {
        "format": "gazeattn-checkpoint",
        "version": 1,
        "dtype": "float32",
        "byte_order": "little",
        "payload": PAYLOAD,
        "variant": model.variant.value,
        "model_config": model_config_to_dict(model.cfg),
        "optimizer_state": opt_state,
        "arrays": entries,
        **(meta or {}),
    }
    path = run_dir / HEADER
    path.write_text(json.dumps(header, indent=1) + "\n")
    return path


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if path.is_dir():
        path = path / HEADER
    header = json.loads(path.read_text())
    raw = (path.parent / header["payload"]).read_bytes()
    arrays = {}
    for e in header["arrays"]:
        chunk = raw[e["offset"]: e["offset"] + e["nbytes"]]
        if len(chunk) != e["nbytes"]:
            raise ValueError(f"{path}: truncated payload for {e['name']}")
        arrays[e["name"]] = np.frombuffer(chunk, dtype="<f4").reshape(e["shape"]).astype(np.float32)
    return header, arrays


def load_model(path) -> tuple[GazeModel, dict]:
    header, arrays = read_checkpoint(path)
    model = GazeModel(Variant(header["variant"]), model_config_from_dict(header["model_config"]))
    state = {k[len("model/"):]: torch.from_numpy(v.copy()) for k, v in arrays.items() if k.startswith("model/")}
    model.load_state_dict(state)
    model.eval()
    return model, header


def load_optimizer_state(path, optimizer) -> None:
    header, arrays = read_checkpoint(path)
    state = header.get("optimizer_state")
    if state is None:
        raise ValueError(f"{path}: checkpoint has no optimizer state")
    optimizer.load_state_dict(_int_keys(_join_state(state, arrays)))

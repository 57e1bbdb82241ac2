"""Checkpoint container: one .npz holding everything needed to resume.

Keys are dotted module paths:

    format_version            int scalar
    config_json               full run-config as a JSON string
    schedule.betas            noise-schedule betas (T,)
    param.<module path>       every trainable array
    optim.<key>               optimizer state (optional)
    train.iteration           completed training iterations
"""

from __future__ import annotations

import json

import numpy as np

from .diffusion import NoiseSchedule
from .nn import ParamStore

FORMAT_VERSION = 1


def save_checkpoint(path, store: ParamStore, schedule: NoiseSchedule,
                    config_dict: dict, iteration: int = 0,
                    optimizer_arrays: dict | None = None) -> None:
    arrays = {
        "format_version": np.array(FORMAT_VERSION),
        "config_json": np.array(json.dumps(config_dict, sort_keys=True)),
        "schedule.betas": schedule.betas,
        "train.iteration": np.array(int(iteration)),
    }
    for name, value in store.items():
        arrays[f"param.{name}"] = value.data
    if optimizer_arrays:
        for key, value in optimizer_arrays.items():
            arrays[f"optim.{key}"] = value
    np.savez(path, **arrays)


def load_checkpoint(path) -> dict:
    """Returns {format_version, config, betas, iteration, params, optim}."""
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format version {version}")
        out = {
            "format_version": version,
            "config": json.loads(str(data["config_json"][()])),
            "betas": np.asarray(data["schedule.betas"], dtype=np.float64),
            "iteration": int(data["train.iteration"]),
            "params": {}, "optim": {},
        }
        for key in data.files:
            if key.startswith("param."):
                out["params"][key[len("param."):]] = np.asarray(data[key])
            elif key.startswith("optim."):
                out["optim"][key[len("optim."):]] = np.asarray(data[key])
    return out

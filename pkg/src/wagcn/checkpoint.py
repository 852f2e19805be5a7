"""Checkpoint directories: ``meta.json`` plus one tensor file per parameter."""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

from .data import read_tensor, write_tensor
from .errors import ValidationError
from .graph import GraphConfig
from .model import FusedParams, ModelConfig, ModelParams

FORMAT_VERSION = 1


def _config_dict(cfg: ModelConfig) -> dict:
    d = asdict(cfg)
    d["dims"] = [int(x) for x in d["dims"]]
    return d


def _config_from(d: dict) -> ModelConfig:
    d = dict(d)
    d["graph"] = GraphConfig(**d["graph"])
    return ModelConfig(**d).validate()


def _save_arrays(params: ModelParams, directory: Path) -> list:
    directory.mkdir(parents=True, exist_ok=True)
    names = sorted(params.arrays)
    for name in names:
        write_tensor(directory / f"{name}.ftns", params.arrays[name])
    return names


def save_checkpoint(params, directory, seed=None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {"format_version": FORMAT_VERSION, "config": _config_dict(params.config), "seed": seed}
    if isinstance(params, FusedParams):
        meta["branches"] = []
        for i, branch in enumerate(params.branches):
            names = _save_arrays(branch, directory / f"branch{i}")
            meta["branches"].append({"config": _config_dict(branch.config), "params": names})
    else:
        meta["params"] = _save_arrays(params, directory)
    with open(directory / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    return directory


def load_checkpoint(directory):
    directory = Path(directory)
    meta_path = directory / "meta.json"
    with open(meta_path) as fh:
        meta = json.load(fh)
    if meta.get("format_version") != FORMAT_VERSION:
        raise ValidationError(f"{meta_path}: unsupported checkpoint version {meta.get('format_version')!r}")
    config = _config_from(meta["config"])

    def load_branch(cfg, names, where):
        return ModelParams(cfg, {n: read_tensor(where / f"{n}.ftns") for n in names})

    if "branches" in meta:
        branches = [
            load_branch(_config_from(b["config"]), b["params"], directory / f"branch{i}")
            for i, b in enumerate(meta["branches"])
        ]
        return FusedParams(config, branches)
    return load_branch(config, meta["params"], directory)

"""Training loop, sampling-length sweep and ablation harness."""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import tape as tp
from .checkpoint import save_checkpoint
from .data import DatasetManifest, uniform_sample
from .errors import ConfigError, DomainError, NumericalError
from .graph import GraphConfig
from .loss import batch_loss, kmax_bce_logits
from .metrics import dataset_eval
from .model import FusedParams, ModelConfig, ModelParams, branch_configs, forward, init_params, score_video
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    T: int = 150
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dropout: float = 0.6
    dims: list = field(default_factory=lambda: [512, 128, 32, 1])
    graph: GraphConfig = field(default_factory=GraphConfig)
    residual: bool = True
    seed: int = 0
    eval_every: int = 0
    precision: str = "double"
    workers: int = 1

    def validate(self):
        for name in ("T", "batch_size", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("epochs", "eval_every"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("lr and weight_decay must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ConfigError("Adam needs 0 <= beta < 1 and eps > 0")
        self.graph.validate()
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        g = d.pop("graph", {})
        if isinstance(g, dict):
            gknown = {f.name for f in fields(GraphConfig)}
            if set(g) - gknown:
                raise ConfigError(f"unknown config keys {sorted('graph.' + k for k in set(g) - gknown)}")
            g = GraphConfig(**g)
        return cls(graph=g, **d).validate()

    def model_config(self, input_dim: int) -> ModelConfig:
        return ModelConfig(
            input_dim=input_dim,
            dims=list(self.dims),
            graph=replace(self.graph),
            residual=self.residual,
            dropout=self.dropout,
            T=self.T,
            precision=self.precision,
        ).validate()


def apply_overrides(base: dict, overrides) -> dict:
    """Apply ``dotted.key=value`` strings; values parse as JSON when possible."""
    out = json.loads(json.dumps(base))
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigError(f"unknown config key {key!r}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[parts[-1]] = value
    return out


@dataclass
class TrainResult:
    log: list
    params: object
    best_params: Optional[object] = None
    final_auc: Optional[float] = None
    best_auc: Optional[float] = None
    checkpoint: Optional[str] = None


@dataclass
class _Sample:
    features: np.ndarray
    label: int


def _load_samples(manifest: DatasetManifest, T: int, dtype) -> tuple:
    samples, input_dim = [], None
    for rec in manifest:
        feats = rec.load_features()
        if input_dim is None:
            input_dim = feats.shape[2]
        elif feats.shape[2] != input_dim:
            raise ConfigError(f"video {rec.id} has D={feats.shape[2]}, expected {input_dim}")
        for crop in feats:
            samples.append(_Sample(uniform_sample(crop, T).astype(dtype), rec.label))
    return samples, input_dim


def _load_full(manifest: DatasetManifest) -> dict:
    return {rec.id: rec.load_features() for rec in manifest}


def score_manifest(params, manifest: DatasetManifest, features: Optional[dict] = None) -> dict:
    features = features or _load_full(manifest)
    return {rec.id: score_video(features[rec.id], params) for rec in manifest}


def _sample_grads(params: ModelParams, sample: _Sample, rng, scale: float):
    tape = tp.Tape(params.config.dtype)
    out = forward(sample.features, params, training=True, rng=rng, tape=tape)
    try:
        loss = kmax_bce_logits(out.logits, sample.label)
    except DomainError:
        return float("nan"), None
    if not np.isfinite(loss.value):
        return loss.value, None
    return loss.value, tape.backward(tp.scale(loss.node, scale))


def _check_finite(arrays: dict, where: str):
    for name, arr in arrays.items():
        if not np.all(np.isfinite(arr)):
            raise NumericalError(f"{where}: parameter {name!r} is not finite")


def _train_branch(samples, mcfg: ModelConfig, cfg: TrainConfig, evaluate=None, tag=""):
    params = init_params(mcfg, cfg.seed)
    state = AdamState(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)
    history, best, best_auc = [], None, None
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            order = np.random.default_rng([cfg.seed, epoch]).permutation(len(samples))
            batch_means = []
            for b, start in enumerate(range(0, len(order), cfg.batch_size)):
                batch = order[start : start + cfg.batch_size]
                scale = 1.0 / len(batch)

                def work(i, _scale=scale):
                    rng = np.random.default_rng([cfg.seed, epoch, int(i)])
                    return _sample_grads(params, samples[i], rng, _scale)

                results = list(pool.map(work, batch)) if pool else [work(i) for i in batch]
                values = [v for v, _ in results]
                mean = batch_loss(values)
                if not np.isfinite(mean) or any(g is None for _, g in results):
                    raise NumericalError(f"{tag}epoch {epoch + 1}, batch {b + 1}: non-finite loss {mean!r}")
                grads = {name: np.zeros_like(arr) for name, arr in params.arrays.items()}
                for _, g in results:
                    for name in grads:
                        grads[name] += g[name]
                adam_step(params.arrays, grads, state)
                batch_means.append((mean, len(batch)))
            _check_finite(params.arrays, f"{tag}epoch {epoch + 1}")
            epoch_loss = sum(m * n for m, n in batch_means) / len(samples)
            entry = {"epoch": epoch + 1, "loss": epoch_loss}
            if tag:
                entry["branch"] = tag.rstrip(": ")
            if evaluate and cfg.eval_every and ((epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.epochs):
                auc = evaluate(params)
                entry["auc"] = auc
                if best_auc is None or auc > best_auc:
                    best_auc, best = auc, params.copy()
            entry["wall_time"] = time.perf_counter() - t0
            log.info("%sepoch %d loss %.6f%s", tag, epoch + 1, epoch_loss, f" auc {entry['auc']:.4f}" if "auc" in entry else "")
            history.append(entry)
    finally:
        if pool:
            pool.shutdown()
    return params, history, best


def train(
    manifest: DatasetManifest,
    cfg: TrainConfig,
    test_manifest: Optional[DatasetManifest] = None,
    out_dir=None,
) -> TrainResult:
    """Fit the network on weakly labelled videos.

    Every crop of every video is one training sample carrying the video
    label. With ``test_manifest`` the final model is evaluated, and every
    ``eval_every`` epochs the best-AUC parameters are tracked.
    """
    cfg.validate()
    if len(manifest) == 0:
        raise ConfigError("training manifest is empty")
    if manifest.labels != {0, 1}:
        raise ConfigError("training needs both normal and abnormal videos")
    dtype = tp.DTYPES.get(cfg.precision)
    if dtype is None:
        raise ConfigError(f"precision must be one of {tuple(tp.DTYPES)}")
    samples, input_dim = _load_samples(manifest, cfg.T, dtype)
    mcfg = cfg.model_config(input_dim)

    test_feats = _load_full(test_manifest) if test_manifest is not None else None

    def evaluate(params):
        return dataset_eval(test_manifest, score_manifest(params, test_manifest, test_feats)).auc

    eval_fn = evaluate if test_manifest is not None else None
    branches = branch_configs(mcfg)
    trained, history, bests = [], [], []
    for bcfg in branches:
        tag = f"{bcfg.graph.mode}: " if len(branches) > 1 else ""
        params, hist, best = _train_branch(samples, bcfg, cfg, eval_fn, tag)
        trained.append(params)
        history.extend(hist)
        bests.append(best)

    if len(trained) > 1:
        final = FusedParams(mcfg, trained)
        best = FusedParams(mcfg, bests) if all(b is not None for b in bests) else None
    else:
        final, best = trained[0], bests[0]

    result = TrainResult(history, final, best)
    if eval_fn is not None:
        result.final_auc = evaluate(final)
        result.best_auc = evaluate(best) if best is not None else None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.checkpoint = str(save_checkpoint(final, out / "final", cfg.seed))
        if best is not None:
            save_checkpoint(best, out / "best", cfg.seed)
        with open(out / "train_log.jsonl", "w") as fh:
            for entry in history:
                fh.write(json.dumps(entry) + "\n")
        if result.final_auc is not None:
            with open(out / "metrics.json", "w") as fh:
                json.dump({"final_auc": result.final_auc, "best_auc": result.best_auc}, fh, indent=2)
    return result


def sweep_sampling_length(
    manifest: DatasetManifest, test_manifest: DatasetManifest, cfg: TrainConfig, T_values, out_dir=None
) -> list:
    """Train and evaluate once per sampling length, all with the same seed."""
    T_values = list(T_values)
    if not T_values:
        raise ConfigError("no sampling lengths given")
    rows = []
    for T in T_values:
        res = train(manifest, replace(cfg, T=int(T)), test_manifest)
        rows.append({"T": int(T), "auc": res.final_auc})
        log.info("sweep T=%d auc %.4f", T, res.final_auc)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "sweep.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["T", "auc"])
            for r in rows:
                w.writerow([r["T"], repr(r["auc"])])
        from .plotting import plot_sweep

        plot_sweep(rows, out / "sweep.png")
    return rows


ABLATION_ROWS = [
    ("dyn_a1", "dyn_a1", "global", True),
    ("dyn_a2", "dyn_a2", "global", True),
    ("para_a", "para_a", "global", True),
    ("csim_a", "csim_a", "global", True),
    ("jsim_a", "jsim_a", "global", True),
    ("feature_only", "dyn_a1", "feature_only", True),
    ("temporal_only", "dyn_a1", "temporal_only", True),
    ("late_fusion", "dyn_a1", "late_fusion", True),
    ("no_residual", "dyn_a1", "global", False),
]


def run_ablation(manifest: DatasetManifest, test_manifest: DatasetManifest, cfg: TrainConfig, out_dir=None) -> list:
    """Adjacency variants, graph modes and the residual-off model, one row each.

    The dyn_a1 row doubles as the global-graph entry of the mode comparison.
    """
    rows = []
    for name, variant, mode, residual in ABLATION_ROWS:
        run_cfg = replace(cfg, graph=replace(cfg.graph, variant=variant, mode=mode), residual=residual)
        res = train(manifest, run_cfg, test_manifest)
        rows.append({"name": name, "variant": variant, "mode": mode, "residual": residual, "auc": res.final_auc})
        log.info("ablation %s auc %.4f", name, res.final_auc)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "ablation.json", "w") as fh:
            json.dump(rows, fh, indent=2)
        from .plotting import plot_ablation

        plot_ablation(rows, out / "ablation.png")
    return rows

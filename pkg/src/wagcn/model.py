"""The adaptive graph convolutional scoring network.

Segment features go through a ReLU fully connected reduction, one adjacency
is built per video, and L graph-convolution layers with residual paths map
the reduced features to one anomaly score per segment.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from . import graph as gr
from . import tape as tp
from .data import sample_indices
from .errors import ConfigError, DimensionError, UsageError, ValidationError


@dataclass
class ModelConfig:
    input_dim: int
    dims: list = field(default_factory=lambda: [512, 128, 32, 1])
    graph: gr.GraphConfig = field(default_factory=gr.GraphConfig)
    residual: bool = True
    dropout: float = 0.6
    T: Optional[int] = None
    precision: str = "double"

    def validate(self):
        self.graph.validate()
        if self.input_dim < 1:
            raise ConfigError("input_dim must be positive")
        if len(self.dims) < 2 or any(int(d) < 1 for d in self.dims):
            raise ConfigError(f"dims must list the reduced size and at least one layer, got {self.dims}")
        if self.dims[-1] != 1:
            raise ConfigError(f"the last layer must have 1 unit, got {self.dims[-1]}")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.precision not in tp.DTYPES:
            raise ConfigError(f"precision must be one of {tuple(tp.DTYPES)}")
        if self.graph.variant == "para_a" and self.graph.uses_feature_graph and not self.T:
            raise ConfigError("para_a needs the training segment count T")
        return self

    @property
    def dtype(self):
        return tp.DTYPES[self.precision]

    @property
    def num_layers(self) -> int:
        return len(self.dims) - 1

    def has_projection(self, layer: int) -> bool:
        return self.residual and self.dims[layer - 1] != self.dims[layer]


@dataclass
class ModelParams:
    config: ModelConfig
    arrays: dict

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()})


@dataclass
class FusedParams:
    """Independently trained single-graph branches whose scores are averaged."""

    config: ModelConfig
    branches: list

    def copy(self) -> "FusedParams":
        return FusedParams(self.config, [b.copy() for b in self.branches])


AnyParams = Union[ModelParams, FusedParams]


@dataclass
class ForwardOutput:
    scores: tp.Node
    tape: tp.Tape
    intermediates: Optional[list] = None
    logits: Optional[tp.Node] = None  # pre-sigmoid scores, for the stable loss

    @property
    def values(self) -> np.ndarray:
        return self.scores.value.ravel()


def param_shapes(config: ModelConfig) -> dict[str, tuple]:
    dims = config.dims
    shapes = {"fc.W": (config.input_dim, dims[0]), "fc.b": (1, dims[0])}
    if config.graph.uses_feature_graph:
        shapes.update(gr.param_shapes(config.graph.variant, dims[0], config.graph.embed_dim, config.T))
    for layer in range(1, len(dims)):
        shapes[f"gcn{layer}.W"] = (dims[layer - 1], dims[layer])
        if config.has_projection(layer):
            shapes[f"gcn{layer}.R"] = (dims[layer - 1], dims[layer])
            shapes[f"gcn{layer}.r"] = (1, dims[layer])
    return shapes


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Uniform(-a, a) weights with a = sqrt(1/fan_in); zero biases and para_a logits."""
    config.validate()
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in param_shapes(config).items():
        if name.endswith((".b", ".r")) or name == "graph.P":
            arrays[name] = np.zeros(shape, dtype=config.dtype)
        else:
            bound = np.sqrt(1.0 / shape[0])
            arrays[name] = rng.uniform(-bound, bound, size=shape).astype(config.dtype)
    return ModelParams(config, arrays)


def forward(
    features: np.ndarray,
    params: ModelParams,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    tape: Optional[tp.Tape] = None,
    debug: bool = False,
    feature_adjacency: Optional[np.ndarray] = None,
) -> ForwardOutput:
    """Score every row of ``features`` (T x D).

    Trainable parameters are registered on ``tape`` under their checkpoint
    names, so ``tape.backward`` returns gradients keyed like ``params.arrays``.
    ``feature_adjacency`` replaces the feature graph with a fixed matrix.
    """
    if isinstance(params, FusedParams):
        raise UsageError("late fusion branches are forwarded one at a time")
    cfg = params.config
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[1] != cfg.input_dim:
        raise DimensionError(f"expected features of shape (T, {cfg.input_dim}), got {features.shape}")
    if features.shape[0] < 1:
        raise ValidationError("a video needs at least one segment")
    if not np.all(np.isfinite(features)):
        raise ValidationError("features contain NaN or Inf")
    if training and cfg.dropout > 0 and rng is None:
        raise UsageError("training-mode forward needs an rng for dropout")

    tape = tape if tape is not None else tp.Tape(cfg.dtype)
    p = {name: tape.params.get(name) or tape.param(name, arr) for name, arr in params.arrays.items()}
    T = features.shape[0]

    X = tp.relu(tp.add_bias(tp.matmul(tape.constant(features), p["fc.W"]), p["fc.b"]))
    if not cfg.graph.uses_feature_graph:
        aF = None
    elif feature_adjacency is not None:
        aF = tape.constant(feature_adjacency)
    else:
        aF = gr.build_feature_adjacency(X, p, cfg.graph.variant)
    A = gr.combine(aF, gr.build_temporal_adjacency(T, tape), cfg.graph.mode)
    if isinstance(A, tuple):
        raise UsageError("late fusion branches are forwarded one at a time")

    trace = [X.value, A.value] if debug else None
    L = cfg.num_layers
    for layer in range(1, L + 1):
        h = tp.matmul(A, tp.matmul(X, p[f"gcn{layer}.W"]))
        if layer < L:
            h = tp.relu(h)
        if cfg.has_projection(layer):
            h = tp.add(h, tp.add_bias(tp.matmul(X, p[f"gcn{layer}.R"]), p[f"gcn{layer}.r"]))
        elif cfg.residual:
            h = tp.add(h, X)
        X = tp.dropout(h, cfg.dropout, training, rng) if layer < L else tp.sigmoid(h)
        if debug:
            trace.append(X.value)
    return ForwardOutput(X, tape, trace, logits=h)


def _nearest_sampled(T_full: int, T: int) -> np.ndarray:
    """For each original segment, the position of the closest sampled one."""
    idx = sample_indices(T_full, T)
    dist = np.abs(np.arange(T_full)[:, None] - idx[None, :])
    return np.argmin(dist, axis=1)


def _score_single(feats: np.ndarray, params: ModelParams) -> np.ndarray:
    cfg = params.config
    if cfg.graph.variant == "para_a" and cfg.graph.uses_feature_graph:
        T_full = feats.shape[0]
        sampled = feats[sample_indices(T_full, cfg.T)]
        out = forward(sampled, params).values
        return out[_nearest_sampled(T_full, cfg.T)]
    return forward(feats, params).values


def score_video(full_features: np.ndarray, params: AnyParams) -> np.ndarray:
    """Inference over all segments; crop scores (and fused branches) are averaged.

    ``full_features`` is C x T_full x D, or T_full x D for a single crop.
    """
    feats = np.asarray(full_features)
    if feats.ndim == 2:
        feats = feats[None]
    if feats.ndim != 3 or feats.shape[0] == 0 or feats.shape[1] == 0:
        raise ValidationError(f"expected C x T x D features with C, T >= 1, got shape {feats.shape}")
    branches = params.branches if isinstance(params, FusedParams) else [params]
    per_branch = []
    for branch in branches:
        crops = [_score_single(crop, branch) for crop in feats]
        per_branch.append(np.mean(crops, axis=0))
    return np.mean(per_branch, axis=0)


def branch_configs(config: ModelConfig) -> list:
    """Configs of the branches trained for ``config`` (two for late fusion)."""
    if config.graph.mode != "late_fusion":
        return [config]
    return [
        replace(config, graph=replace(config.graph, mode="feature_only")),
        replace(config, graph=replace(config.graph, mode="temporal_only")),
    ]

"""Segment-graph adjacency construction.

Two views of a video's T segments are built:

* a feature-similarity adjacency, in one of five variants (three learned,
  two fixed similarity measures), and
* a temporal-consistency adjacency ``exp(-|i - j|)``.

``combine`` turns them into the propagation matrix for a graph mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape as tp
from .errors import ConfigError, DimensionError, UsageError

VARIANTS = ("dyn_a1", "dyn_a2", "para_a", "csim_a", "jsim_a")
MODES = ("global", "feature_only", "temporal_only", "late_fusion")
TRAINABLE = ("dyn_a1", "dyn_a2", "para_a")


@dataclass
class GraphConfig:
    variant: str = "dyn_a1"
    mode: str = "global"
    embed_dim: int = 512

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown graph variant {self.variant!r}; expected one of {VARIANTS}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown graph mode {self.mode!r}; expected one of {MODES}")
        if self.embed_dim < 1:
            raise ConfigError("graph.embed_dim must be positive")
        return self

    @property
    def uses_feature_graph(self) -> bool:
        return self.mode != "temporal_only"


def param_shapes(variant: str, reduced_dim: int, embed_dim: int, T: int | None = None) -> dict[str, tuple]:
    """Shapes of the trainable graph parameters for ``variant``."""
    if variant == "dyn_a1":
        return {"graph.W1": (reduced_dim, embed_dim), "graph.W2": (reduced_dim, embed_dim)}
    if variant == "dyn_a2":
        return {"graph.w": (reduced_dim, embed_dim)}
    if variant == "para_a":
        if T is None:
            raise ConfigError("para_a needs a fixed segment count T")
        return {"graph.P": (T, T)}
    return {}


def build_feature_adjacency(X: tp.Node, params: dict[str, tp.Node], variant: str) -> tp.Node:
    """Feature-similarity adjacency for reduced segment features ``X`` (T x D').

    ``params`` maps the names from :func:`param_shapes` to tape nodes.
    csim_a and jsim_a come back as constants (no gradient reaches ``X``).
    """
    T = X.shape[0]
    if variant == "dyn_a1":
        W1, W2 = params["graph.W1"], params["graph.W2"]
        _check_rows(X, W1)
        left = tp.relu(tp.matmul(X, W1))
        right = tp.relu(tp.matmul(X, W2))
        return tp.softmax_rows(tp.matmul(left, tp.transpose(right)))
    if variant == "dyn_a2":
        w = params["graph.w"]
        _check_rows(X, w)
        Z = tp.matmul(X, w)
        E = tp.matmul(Z, tp.transpose(Z))
        return tp.normalize_rows(tp.square(E))
    if variant == "para_a":
        P = params["graph.P"]
        if P.shape != (T, T):
            raise DimensionError(f"para_a matrix is {P.shape} but the video has T={T} segments")
        return tp.softmax_rows(P)
    if variant in ("csim_a", "jsim_a"):
        return X.tape.constant(fixed_adjacency(X.value, variant))
    raise ConfigError(f"unknown graph variant {variant!r}")


def _check_rows(X, W):
    if X.shape[1] != W.shape[0]:
        raise DimensionError(f"features have D'={X.shape[1]} but graph weight is {W.shape}")


def fixed_adjacency(X: np.ndarray, variant: str) -> np.ndarray:
    """Row-normalized cosine or Jaccard similarity, used as a constant adjacency.

    Raw similarities of ReLU features sit near 1 everywhere, so unnormalized rows
    sum to about T and push the sigmoid head to exactly 1.0 at initialization.
    The unit diagonal keeps every row sum at least 1.
    """
    measure = cosine_similarity if variant == "csim_a" else jaccard_similarity
    A = measure(X)
    return A / A.sum(axis=1, keepdims=True)


def cosine_similarity(X: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity of rows clamped to [0, 1]; zero rows get only a unit diagonal."""
    norms = np.linalg.norm(X, axis=1)
    live = norms > 0
    unit = np.zeros_like(X)
    unit[live] = X[live] / norms[live, None]
    sim = np.clip(unit @ unit.T, 0.0, 1.0)
    np.fill_diagonal(sim, 1.0)
    return sim


def jaccard_similarity(X: np.ndarray) -> np.ndarray:
    """Generalized Jaccard sum(min)/sum(max) on ReLU-rectified rows."""
    X = np.maximum(X, 0)
    T = X.shape[0]
    sim = np.zeros((T, T), dtype=X.dtype)
    for i in range(T):
        mins = np.minimum(X[i], X).sum(axis=1)
        maxs = np.maximum(X[i], X).sum(axis=1)
        nz = maxs > 0
        sim[i, nz] = mins[nz] / maxs[nz]
    np.fill_diagonal(sim, 1.0)
    return sim


def temporal_matrix(T: int, dtype=np.float64) -> np.ndarray:
    if T < 1:
        raise UsageError(f"temporal adjacency needs T >= 1, got {T}")
    idx = np.arange(T)
    return np.exp(-np.abs(idx[:, None] - idx[None, :]).astype(dtype))


def build_temporal_adjacency(T: int, tape: tp.Tape) -> tp.Node:
    return tape.constant(temporal_matrix(T, tape.dtype))


def combine(aF, aT, mode: str):
    """Propagation matrix for ``mode``; late_fusion returns the pair ``(aF, aT)``.

    Works on tape nodes or plain arrays. ``aF`` may be None for temporal_only.
    """
    if aF is not None and aF.shape != aT.shape:
        raise DimensionError(f"adjacency size mismatch: {aF.shape} vs {aT.shape}")
    if mode == "global":
        return tp.add(aF, aT) if isinstance(aF, tp.Node) else aF + aT
    if mode == "feature_only":
        return aF
    if mode == "temporal_only":
        return aT
    if mode == "late_fusion":
        return aF, aT
    raise ConfigError(f"unknown graph mode {mode!r}")

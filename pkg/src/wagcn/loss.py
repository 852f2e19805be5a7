"""k-max multiple-instance BCE loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape as tp
from .errors import DomainError, UsageError


def compute_k(T: int) -> int:
    """k = floor(T/8 + 1)."""
    if T < 1:
        raise UsageError(f"T must be >= 1, got {T}")
    return (T + 8) // 8


@dataclass
class KMaxLoss:
    node: tp.Node
    k: int
    indices: np.ndarray

    @property
    def value(self) -> float:
        return float(self.node.value[0, 0])


def kmax_bce(scores: tp.Node, label: int) -> KMaxLoss:
    """BCE of the k highest segment scores against the video label.

    Every segment gets the video label as pseudo label; selection is by
    score value regardless of class. Scores must lie strictly in (0, 1).
    """
    if label not in (0, 1):
        raise UsageError(f"label must be 0 or 1, got {label!r}")
    v = scores.value
    if np.any(v <= 0) or np.any(v >= 1):
        raise DomainError(f"scores must lie strictly in (0, 1); got range [{v.min()!r}, {v.max()!r}]")
    k = compute_k(v.size)
    selected, idx = tp.topk_select(scores, k)
    # the zero-weighted BCE term is dropped, it contributes exactly 0
    if label == 1:
        term = tp.log(selected)
    else:
        term = tp.log(tp.add(tp.scale(selected, -1.0), np.ones(selected.shape)))
    return KMaxLoss(tp.scale(tp.total(term), -1.0 / k), k, idx)


def kmax_bce_logits(logits: tp.Node, label: int) -> KMaxLoss:
    """:func:`kmax_bce` evaluated on pre-sigmoid scores.

    Same value as ``kmax_bce(sigmoid(logits), label)`` but finite even when the
    sigmoid rounds to exactly 0 or 1, which happens once the model is confident.
    Selection by logit picks the same segments since the sigmoid is monotone.
    """
    if label not in (0, 1):
        raise UsageError(f"label must be 0 or 1, got {label!r}")
    v = logits.value
    if not np.all(np.isfinite(v)):
        raise DomainError("non-finite logits")
    k = compute_k(v.size)
    selected, idx = tp.topk_select(logits, k)
    # log(1 - sigmoid(z)) = log sigmoid(-z)
    term = tp.log_sigmoid(selected if label == 1 else tp.scale(selected, -1.0))
    return KMaxLoss(tp.scale(tp.total(term), -1.0 / k), k, idx)


def batch_loss(losses) -> float:
    """Mean of per-video losses, summed in the given order."""
    losses = list(losses)
    if not losses:
        raise UsageError("empty batch")
    acc = 0.0
    for item in losses:
        acc += item.value if isinstance(item, KMaxLoss) else float(item)
    return acc / len(losses)

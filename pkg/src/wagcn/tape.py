"""Minimal reverse-mode differentiation over dense 2-D arrays.

Only the primitives the network needs are provided. Every value is a 2-D
numpy array; there is no broadcasting except the explicit row-bias add.
Each primitive appends a :class:`Node` to the tape it was called on, so the
tape is always in topological order and :meth:`Tape.backward` simply walks
it in reverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, DomainError, UsageError

DTYPES = {"single": np.float32, "double": np.float64}


class Node:
    """A value recorded on a tape."""

    __slots__ = ("tape", "index", "value", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, tape, value, parents=(), backward_fn=None, requires_grad=False, name=None):
        self.tape = tape
        self.value = value
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.name = name
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<Node{label} #{self.index} shape={self.value.shape}>"


class Tape:
    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}

    def param(self, name: str, value) -> Node:
        """Register a trainable leaf."""
        if name in self.params:
            raise UsageError(f"parameter {name!r} already on tape")
        node = Node(self, _as2d(value, self.dtype), requires_grad=True, name=name)
        self.params[name] = node
        return node

    def constant(self, value, name=None) -> Node:
        return Node(self, _as2d(value, self.dtype), name=name)

    def backward(self, loss: Node) -> dict[str, np.ndarray]:
        """Reverse accumulation from a scalar ``loss``.

        Returns the gradient of every registered parameter (zeros when the
        loss does not depend on it).
        """
        if loss.tape is not self:
            raise UsageError("loss node belongs to a different tape")
        if loss.value.shape != (1, 1):
            raise UsageError(f"backward needs a scalar (1x1) loss, got shape {loss.value.shape}")
        grads: list[Optional[np.ndarray]] = [None] * len(self.nodes)
        grads[loss.index] = np.ones((1, 1), dtype=loss.value.dtype)
        for node in reversed(self.nodes[: loss.index + 1]):
            g = grads[node.index]
            if g is None or node.backward_fn is None:
                continue
            contribs = node.backward_fn(g)
            for parent, c in zip(node.parents, contribs):
                if c is None or not parent.requires_grad:
                    continue
                if grads[parent.index] is None:
                    grads[parent.index] = c
                else:
                    grads[parent.index] = grads[parent.index] + c
        out = {}
        for name, p in self.params.items():
            g = grads[p.index]
            out[name] = np.zeros_like(p.value) if g is None else g
        return out


def _as2d(value, dtype) -> np.ndarray:
    arr = np.asarray(value, dtype=dtype)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"expected a 2-D value, got shape {arr.shape}")
    return arr


def _lift(x, like: Node) -> Node:
    if isinstance(x, Node):
        if x.tape is not like.tape:
            raise UsageError("operands live on different tapes")
        return x
    return like.tape.constant(x)


def _op(value, parents: Sequence[Node], backward_fn: Callable) -> Node:
    tape = parents[0].tape
    req = any(p.requires_grad for p in parents)
    return Node(tape, value, parents, backward_fn if req else None, requires_grad=req)


# -- primitives --------------------------------------------------------------


def matmul(a: Node, b: Node) -> Node:
    b = _lift(b, a)
    a = _lift(a, b)
    av, bv = a.value, b.value
    if av.shape[1] != bv.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {av.shape} x {bv.shape}")

    def backward(g):
        return (g @ bv.T if a.requires_grad else None, av.T @ g if b.requires_grad else None)

    return _op(av @ bv, (a, b), backward)


def transpose(a: Node) -> Node:
    return _op(a.value.T.copy(), (a,), lambda g: (g.T,))


def softmax_rows(m: Node) -> Node:
    """Row-wise normalized exponential with max subtraction."""
    z = m.value - m.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return _op(s, (m,), backward)


def _relu_backward(x, g):
    return g * (x > 0)


def _sigmoid_backward(s, g):
    return g * s * (1.0 - s)


def relu(m: Node) -> Node:
    x = m.value
    return _op(np.maximum(x, 0), (m,), lambda g: (_relu_backward(x, g),))


def sigmoid(m: Node) -> Node:
    x = m.value
    # split on sign so exp never overflows
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return _op(s, (m,), lambda g: (_sigmoid_backward(s, g),))


def log_sigmoid(m: Node) -> Node:
    """log(sigmoid(x)) = min(x, 0) - log1p(exp(-|x|)); finite for any finite x."""
    x = m.value
    out = np.minimum(x, 0) - np.log1p(np.exp(-np.abs(x)))
    # d/dx log sigmoid(x) = sigmoid(-x)
    e = np.exp(-np.abs(x))
    slope = np.where(x >= 0, e / (1.0 + e), 1.0 / (1.0 + e))
    return _op(out.astype(x.dtype), (m,), lambda g: (g * slope,))


def log(m: Node) -> Node:
    x = m.value
    if np.any(x <= 0):
        raise DomainError(f"log of non-positive value (min {x.min()!r})")
    return _op(np.log(x), (m,), lambda g: (g / x,))


def scale(m: Node, c: float) -> Node:
    return _op(m.value * c, (m,), lambda g: (g * c,))


def add(a: Node, b: Node) -> Node:
    b = _lift(b, a)
    a = _lift(a, b)
    if a.value.shape != b.value.shape:
        raise DimensionError(f"add shape mismatch: {a.value.shape} vs {b.value.shape}")
    return _op(a.value + b.value, (a, b), lambda g: (g, g))


def add_bias(m: Node, b: Node) -> Node:
    """``m + b`` with a 1xN bias broadcast over rows."""
    b = _lift(b, m)
    if b.value.shape != (1, m.value.shape[1]):
        raise DimensionError(f"bias shape {b.value.shape} does not fit {m.value.shape}")
    return _op(m.value + b.value, (m, b), lambda g: (g, g.sum(axis=0, keepdims=True)))


def square(m: Node) -> Node:
    x = m.value
    return _op(x * x, (m,), lambda g: (2.0 * x * g,))


def normalize_rows(m: Node) -> Node:
    """Divide every row by its sum; a row summing to zero becomes uniform.

    Entries are assumed non-negative.
    """
    x = m.value
    s = x.sum(axis=1, keepdims=True)
    dead = (s == 0).ravel()
    safe = np.where(s == 0, 1.0, s)
    out = x / safe
    out[dead] = 1.0 / x.shape[1]

    def backward(g):
        gx = (g - (g * out).sum(axis=1, keepdims=True)) / safe
        gx[dead] = 0.0
        return (gx,)

    return _op(out, (m,), backward)


def total(m: Node) -> Node:
    """Sum of all entries as a 1x1 node."""
    shape = m.value.shape
    return _op(m.value.sum().reshape(1, 1), (m,), lambda g: (np.full(shape, g[0, 0], dtype=g.dtype),))


def gather_rows(m: Node, indices) -> Node:
    idx = np.asarray(indices, dtype=np.intp)
    shape = m.value.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, idx, g)
        return (full,)

    return _op(m.value[idx], (m,), backward)


def topk_select(v: Node, k: int):
    """Largest ``k`` entries of a column (Tx1) or row (1xT) vector.

    Values come out descending as a kx1 node; ties go to the lower index.
    """
    flat = v.value.ravel()
    if not 1 <= k <= flat.size:
        raise UsageError(f"k={k} out of range for vector of length {flat.size}")
    order = np.argsort(-flat, kind="stable")[:k]
    col = v if v.value.shape[1] == 1 else transpose(v)
    return gather_rows(col, order), order


def elementwise(kind: str, m: Node, m2: Optional[Node] = None, c: Optional[float] = None) -> Node:
    if kind == "relu":
        return relu(m)
    if kind == "sigmoid":
        return sigmoid(m)
    if kind == "log":
        return log(m)
    if kind == "scale":
        if c is None:
            raise UsageError("scale needs a constant c")
        return scale(m, c)
    if kind == "add":
        if m2 is None:
            raise UsageError("add needs a second operand")
        return add(m, m2)
    raise UsageError(f"unknown elementwise kind {kind!r}")


def dropout(m: Node, rate: float, training: bool, rng: Optional[np.random.Generator]) -> Node:
    """Inverted dropout. The mask is drawn from ``rng`` only when it matters."""
    if not 0 <= rate < 1:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0:
        return m
    keep = rng.random(m.value.shape) >= rate
    mask = keep.astype(m.value.dtype) / (1.0 - rate)
    return _op(m.value * mask, (m,), lambda g: (g * mask,))


def backward(tape: Tape, loss: Node) -> dict[str, np.ndarray]:
    return tape.backward(loss)


# -- gradient checking --------------------------------------------------------


@dataclass
class GradReport:
    max_rel_error: dict[str, float]
    max_abs_error: dict[str, float]
    tolerance: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = all(e < self.tolerance for e in self.max_rel_error.values())

    def to_dict(self) -> dict:
        return {
            "pass": self.passed,
            "tolerance": self.tolerance,
            "max_rel_error": self.max_rel_error,
            "max_abs_error": self.max_abs_error,
        }


def check_gradients(
    loss_fn: Callable[[Tape, dict[str, np.ndarray]], Node],
    params: dict[str, np.ndarray],
    tolerance: float = 1e-4,
    h: float = 1e-6,
) -> GradReport:
    """Compare tape gradients of ``loss_fn`` with central finite differences.

    ``loss_fn(tape, params)`` must build the loss on ``tape`` (registering
    parameters via ``tape.param``) and be deterministic. Error per entry is
    ``|g_tape - g_fd| / max(1, |g_fd|)``.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    tape = Tape(np.float64)
    analytic = tape.backward(loss_fn(tape, params))

    def value_at():
        return float(loss_fn(Tape(np.float64), params).value[0, 0])

    rel, absolute = {}, {}
    for name, arr in params.items():
        fd = np.empty_like(arr)
        flat, fdf = arr.reshape(-1), fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = value_at()
            flat[i] = orig - h
            down = value_at()
            flat[i] = orig
            fdf[i] = (up - down) / (2 * h)
        diff = np.abs(analytic[name] - fd)
        absolute[name] = float(diff.max()) if diff.size else 0.0
        rel[name] = float((diff / np.maximum(1.0, np.abs(fd))).max()) if diff.size else 0.0
    return GradReport(rel, absolute, tolerance)

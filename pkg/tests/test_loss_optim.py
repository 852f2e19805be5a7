import math

import numpy as np
import pytest

from wagcn import tape as tp
from wagcn.errors import DomainError, NumericalError, UsageError
from wagcn.loss import batch_loss, compute_k, kmax_bce, kmax_bce_logits
from wagcn.optim import AdamState, adam_step


def reference_kmax(scores, label):
    """Sort, take the top floor(T/8 + 1), average the BCE terms."""
    s = sorted((float(x) for x in scores), reverse=True)
    k = math.floor(len(s) / 8 + 1)
    terms = [label * math.log(x) + (1 - label) * math.log(1 - x) for x in s[:k]]
    return -sum(terms) / k


def loss_of(scores, label):
    t = tp.Tape()
    v = t.param("s", np.asarray(scores, dtype=float).reshape(-1, 1))
    res = kmax_bce(v, label)
    return res, t.backward(res.node)["s"].ravel()


@pytest.mark.parametrize("T,k", [(150, 19), (100, 13), (1, 1), (8, 2), (7, 1), (16, 3), (64, 9)])
def test_compute_k(T, k):
    assert compute_k(T) == k


def test_compute_k_monotone_and_bounded():
    ks = [compute_k(T) for T in range(1, 2000)]
    assert all(a <= b for a, b in zip(ks, ks[1:]))
    assert all(k <= T for T, k in zip(range(1, 2000), ks))
    assert all(k == math.floor(T / 8 + 1) for T, k in zip(range(1, 2000), ks))
    with pytest.raises(UsageError):
        compute_k(0)


def test_kmax_examples():
    for T in (1, 5, 16, 40):
        res, _ = loss_of([0.5] * T, 1)
        assert res.value == pytest.approx(math.log(2), abs=1e-15)
    res, _ = loss_of([0.5] + [0.0001] * 6, 0)
    assert res.k == 1
    assert res.value == pytest.approx(-math.log(0.5), abs=1e-15)


def test_kmax_matches_reference_random():
    rng = np.random.default_rng(0)
    for _ in range(50):
        s = rng.uniform(0.01, 0.99, 16)
        y = int(rng.integers(0, 2))
        res, _ = loss_of(s, y)
        assert res.k == 3
        assert abs(res.value - reference_kmax(s, y)) < 1e-12


def test_kmax_gradient_support_and_sign():
    s = np.array([0.2, 0.9, 0.4, 0.95, 0.1, 0.3, 0.5, 0.6, 0.7])  # T=9 -> k=2
    res, g = loss_of(s, 1)
    assert sorted(res.indices) == [1, 3]
    assert np.all(g[[0, 2, 4, 5, 6, 7, 8]] == 0)
    assert np.all(g[[1, 3]] < 0)  # raising a selected score lowers the loss for Y=1
    _, g0 = loss_of(s, 0)
    assert np.all(g0[[1, 3]] > 0)


def test_kmax_domain_errors():
    with pytest.raises(DomainError):
        loss_of([0.5, 1.0], 1)
    with pytest.raises(DomainError):
        loss_of([0.0, 0.5], 0)
    with pytest.raises(UsageError):
        loss_of([0.5], 2)


def test_batch_loss():
    rng = np.random.default_rng(1)
    losses = [loss_of(rng.uniform(0.05, 0.95, 20), i % 2)[0] for i in range(4)]
    assert batch_loss(losses[:1]) == losses[0].value
    assert batch_loss([losses[0]] * 3) == pytest.approx(losses[0].value, rel=1e-15)
    assert batch_loss(losses) == pytest.approx(sum(x.value for x in losses) / 4, abs=1e-15)
    with pytest.raises(UsageError):
        batch_loss([])


def reference_adam(p, grad_fn, steps, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8, wd=0.0):
    m = v = 0.0
    out = []
    for t in range(1, steps + 1):
        g = grad_fn(p) + wd * p
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        p = p - lr * mhat / (math.sqrt(vhat) + eps)
        out.append(p)
    return out


def test_adam_zero_grad_no_decay():
    params = {"w": np.array([[1.0, -2.0]])}
    state = AdamState(weight_decay=0.0)
    adam_step(params, {"w": np.zeros((1, 2))}, state)
    np.testing.assert_array_equal(params["w"], [[1.0, -2.0]])
    assert state.t == 1


def test_adam_first_step_magnitude():
    params = {"w": np.array([[1.0]])}
    adam_step(params, {"w": np.array([[1.0]])}, AdamState(lr=1e-3, weight_decay=0.0))
    assert 1.0 - params["w"][0, 0] == pytest.approx(1e-3 / (1 + 1e-8), rel=1e-12)


@pytest.mark.parametrize("wd", [0.0, 5e-4])
def test_adam_matches_reference_loop(wd):
    grad = lambda p: 2 * (p - 3.0)  # noqa: E731  quadratic (p-3)^2
    ref = reference_adam(0.5, grad, 5, lr=0.1, wd=wd)
    params = {"p": np.array([[0.5]])}
    state = AdamState(lr=0.1, weight_decay=wd)
    for expected in ref:
        adam_step(params, {"p": grad(params["p"])}, state)
        assert abs(params["p"][0, 0] - expected) < 1e-12
    assert state.t == 5


def test_adam_nonfinite_gradient_names_parameter():
    with pytest.raises(NumericalError, match="bad"):
        adam_step({"bad": np.zeros((1, 1))}, {"bad": np.array([[np.nan]])}, AdamState())


def test_adam_deterministic_and_lr_zero():
    rng = np.random.default_rng(2)
    p0 = rng.standard_normal((3, 4))
    g = rng.standard_normal((3, 4))
    a, b = {"w": p0.copy()}, {"w": p0.copy()}
    adam_step(a, {"w": g}, AdamState())
    adam_step(b, {"w": g}, AdamState())
    assert a["w"].tobytes() == b["w"].tobytes()
    c = {"w": p0.copy()}
    adam_step(c, {"w": g}, AdamState(lr=0.0))
    assert c["w"].tobytes() == p0.tobytes()


def test_logit_loss_matches_score_loss():
    rng = np.random.default_rng(3)
    for _ in range(50):
        z = rng.normal(0, 3, int(rng.integers(1, 40)))
        y = int(rng.integers(0, 2))
        t = tp.Tape()
        zn = t.param("z", z.reshape(-1, 1))
        via_logits = kmax_bce_logits(zn, y)
        g_logits = t.backward(via_logits.node)["z"]
        t2 = tp.Tape()
        zn2 = t2.param("z", z.reshape(-1, 1))
        via_scores = kmax_bce(tp.sigmoid(zn2), y)
        g_scores = t2.backward(via_scores.node)["z"]
        assert abs(via_logits.value - via_scores.value) < 1e-12
        assert list(via_logits.indices) == list(via_scores.indices)
        np.testing.assert_allclose(g_logits, g_scores, rtol=0, atol=1e-12)


def test_logit_loss_survives_saturation():
    z = np.array([[40.0], [-800.0], [3.0]])
    with pytest.raises(DomainError):
        kmax_bce(tp.sigmoid(tp.Tape().constant(z)), 0)
    t = tp.Tape()
    res = kmax_bce_logits(t.param("z", z), 0)
    assert res.value == pytest.approx(40.0, rel=1e-12)  # -log(1 - sigmoid(40)) ~ 40
    assert t.backward(res.node)["z"][0, 0] == pytest.approx(1.0, abs=1e-15)
    res1 = kmax_bce_logits(tp.Tape().constant(np.array([[-40.0], [-800.0]])), 1)
    assert np.isfinite(res1.value) and res1.value == pytest.approx(40.0, rel=1e-12)
    with pytest.raises(DomainError):
        kmax_bce_logits(tp.Tape().constant(np.array([[np.inf]])), 1)

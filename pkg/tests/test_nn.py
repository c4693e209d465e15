import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from raec.nn import (
    AdamState,
    Hyper,
    NonFiniteGradientError,
    ShapeError,
    adam_step,
    bce_grad,
    bce_loss,
    dense,
    glorot_uniform,
    grad_check,
    orthogonal,
    relative_error,
    sigmoid,
)


# -- dense -------------------------------------------------------------------


def test_dense_zero_sigmoid():
    np.testing.assert_array_equal(dense(np.ones(4), np.zeros((3, 4)), np.zeros(3), "sigmoid"), [0.5, 0.5, 0.5])


def test_dense_identity():
    x = np.array([0.3, -1.0, 2.0])
    np.testing.assert_array_equal(dense(x, np.eye(3), np.zeros(3), "identity"), x)


def test_dense_matches_triple_loop():
    rng = np.random.default_rng(0)
    W, b, x = rng.normal(size=(3, 4)), rng.normal(size=3), rng.normal(size=4)
    oracle = [math.tanh(b[i] + sum(W[i][j] * x[j] for j in range(4))) for i in range(3)]
    np.testing.assert_allclose(dense(x, W, b, "tanh"), oracle, atol=1e-12)


def test_dense_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(3, 4\).*\(5,\)"):
        dense(np.ones(5), np.zeros((3, 4)), np.zeros(3))


def test_sigmoid_stable():
    assert sigmoid(0.0) == 0.5
    out = sigmoid(np.array([-800.0, 800.0]))
    assert out[0] == 0.0 and out[1] == 1.0


# -- BCE ---------------------------------------------------------------------


def test_bce_half():
    assert bce_loss(0.5, 1) == pytest.approx(math.log(2), abs=1e-15)


def test_bce_monotone_to_zero():
    ps = [0.5, 0.9, 0.99, 0.999, 1 - 1e-6]
    losses = [bce_loss(p, 1) for p in ps]
    assert all(a > b for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 1e-5


def test_bce_grad_value_and_fd():
    g = bce_grad(np.array([0.25]), np.array([0.0]))[0]
    assert g == pytest.approx(4.0 / 3.0, rel=1e-12)
    h = 1e-6
    fd = (bce_loss(0.25 + h, 0) - bce_loss(0.25 - h, 0)) / (2 * h)
    assert fd == pytest.approx(4.0 / 3.0, rel=1e-8)


def test_bce_batch_mean():
    p, y = np.array([0.2, 0.7]), np.array([0.0, 1.0])
    assert bce_loss(p, y) == pytest.approx((-math.log(0.8) - math.log(0.7)) / 2)


def test_bce_bad_label():
    with pytest.raises(ValueError):
        bce_loss(0.5, 2)


def test_bce_clamp():
    assert bce_loss(0.0, 1) == pytest.approx(-math.log(1e-7))
    assert bce_grad(np.array([0.0]), np.array([1.0]))[0] == 0.0


def test_bce_convex_midpoint():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        p1, p2 = rng.uniform(1e-6, 1 - 1e-6, 2)
        y = int(rng.integers(0, 2))
        assert bce_loss((p1 + p2) / 2, y) <= (bce_loss(p1, y) + bce_loss(p2, y)) / 2 + 1e-15


# -- init --------------------------------------------------------------------


def test_glorot_limit():
    w = glorot_uniform(np.random.default_rng(0), 64, 128, (64, 128))
    assert np.abs(w).max() <= math.sqrt(6 / 192)


def test_orthogonal():
    q = orthogonal(np.random.default_rng(0), (8, 32))
    assert q.flags.c_contiguous
    np.testing.assert_allclose(q @ q.T, np.eye(8), atol=1e-12)


# -- ADAM --------------------------------------------------------------------


def test_hyper_defaults_and_validation():
    h = Hyper()
    assert (h.learning_rate, h.beta1, h.beta2, h.epsilon) == (0.001, 0.9, 0.999, 1e-8)
    for bad in (dict(learning_rate=-1), dict(beta1=1.0), dict(beta2=-0.1), dict(epsilon=0), dict(batch_size=0)):
        with pytest.raises(ValueError):
            Hyper(**bad)


def test_adam_first_step_is_lr_sign():
    for g in (3.0, -0.02, 1e4):
        p = {"w": np.array([1.0])}
        adam_step(p, {"w": np.array([g])}, AdamState(), Hyper())
        upd = p["w"][0] - 1.0
        assert abs(abs(upd) - 0.001) <= 0.001 * 1e-6
        assert np.sign(upd) == -np.sign(g)


def test_adam_zero_gradient():
    p = {"w": np.array([1.0, -2.0])}
    s = AdamState()
    adam_step(p, {"w": np.zeros(2)}, s, Hyper())
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])
    assert s.t == 1


def test_adam_quadratic_matches_reference_recurrence():
    # f(w) = 0.5 * a * w^2, gradient a * w
    a, lr, b1, b2, eps = 3.0, 0.1, 0.9, 0.999, 1e-8
    w_ref, m, v = 2.0, 0.0, 0.0
    ref = []
    for t in range(1, 4):
        g = a * w_ref
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w_ref -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        ref.append(w_ref)
    p = {"w": np.array([2.0])}
    s = AdamState()
    got = []
    for _ in range(3):
        adam_step(p, {"w": a * p["w"]}, s, Hyper(learning_rate=lr))
        got.append(p["w"][0])
    np.testing.assert_allclose(got, ref, atol=1e-12, rtol=0)


def test_adam_non_finite_is_atomic():
    p = {"a": np.array([1.0]), "b": np.array([2.0])}
    s = AdamState()
    with pytest.raises(NonFiniteGradientError) as ei:
        adam_step(p, {"a": np.array([0.5]), "b": np.array([np.nan])}, s, Hyper())
    assert ei.value.name == "b"
    assert p["a"][0] == 1.0 and p["b"][0] == 2.0 and s.t == 0 and not s.m


def test_adam_key_mismatch():
    with pytest.raises(KeyError):
        adam_step({"a": np.zeros(1)}, {"b": np.zeros(1)}, AdamState(), Hyper())


@settings(max_examples=200, deadline=None)
@given(
    log_mag=st.lists(st.floats(-8, 8), min_size=1, max_size=6),
    n_steps=st.integers(1, 25),
    seed=st.integers(0, 2**16),
)
def test_adam_update_bounded_by_lr(log_mag, n_steps, seed):
    """Constant per-coordinate magnitude, arbitrary signs: every update is at most lr."""
    rng = np.random.default_rng(seed)
    mags = 10.0 ** np.array(log_mag)
    hyper = Hyper()
    p = {"w": np.zeros(mags.size)}
    s = AdamState()
    for _ in range(n_steps):
        g = mags * rng.choice([-1.0, 1.0], size=mags.size)
        before = p["w"].copy()
        adam_step(p, {"w": g}, s, hyper)
        assert np.all(np.abs(p["w"] - before) <= hyper.learning_rate * (1 + 1e-9))


# -- grad_check --------------------------------------------------------------


def test_grad_check_linear_model_exact():
    c = np.array([1.5, -2.0, 0.25])
    params = {"w": np.array([0.3, 0.1, -0.7])}
    for h in (1e-3, 1e-5, 1e-2):
        rep = grad_check(lambda p: (float(c @ p["w"]), {"w": c.copy()}), params, perturbation=h)
        assert rep.worst < 1e-10


def test_grad_check_detects_corruption():
    params = {"a": np.array([0.3, -0.2]), "b": np.array([1.1])}

    def f(p, corrupt=False):
        loss = float(np.sum(p["a"] ** 3) + np.sin(p["b"][0]))
        g = {"a": 3 * p["a"] ** 2, "b": np.array([np.cos(p["b"][0])])}
        if corrupt:
            g["a"][1] *= 2.0
        return loss, g

    assert grad_check(f, params).passed
    rep = grad_check(lambda p: f(p, corrupt=True), params)
    assert not rep.passed and rep.failures == ["a"]
    assert "a" in str(rep)


def test_relative_error_floor():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1e-9, 0.0) == pytest.approx(0.1)

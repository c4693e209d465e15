"""Dense layers, binary cross-entropy, ADAM and a finite-difference gradient checker.

Parameters are plain ``dict[str, np.ndarray]`` mappings (insertion ordered);
gradients use the same keys and shapes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

BCE_EPS = 1e-7


class ShapeError(ValueError):
    pass


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for parameter {name!r}")
        self.name = name


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out if out.ndim else float(out)


ACTIVATIONS: dict[str, Callable] = {
    "sigmoid": sigmoid,
    "tanh": np.tanh,
    "identity": lambda x: x,
}


def dense(x, weights, bias, activation: str = "identity"):
    """``activation(W @ x + b)`` with ``W`` of shape ``(out, in)``."""
    x = np.asarray(x, dtype=np.float64)
    W = np.asarray(weights, dtype=np.float64)
    b = np.asarray(bias, dtype=np.float64)
    if W.ndim != 2 or x.shape != (W.shape[1],) or b.shape != (W.shape[0],):
        raise ShapeError(f"dense: weights {W.shape} incompatible with input {x.shape} / bias {b.shape}")
    try:
        act = ACTIVATIONS[activation]
    except KeyError:
        raise ValueError(f"unknown activation {activation!r}") from None
    return act(W @ x + b)


def _check_labels(labels):
    y = np.asarray(labels, dtype=np.float64)
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("labels must be 0 or 1")
    return y


def bce_loss(prediction, label) -> float:
    """Mean binary cross-entropy; predictions are clamped to ``[eps, 1 - eps]``."""
    y = _check_labels(label)
    p = np.clip(np.asarray(prediction, dtype=np.float64), BCE_EPS, 1.0 - BCE_EPS)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))


def bce_grad(prediction, label) -> np.ndarray:
    """d(mean BCE)/d(prediction); zero where the clamp is active."""
    y = _check_labels(label)
    p_raw = np.asarray(prediction, dtype=np.float64)
    p = np.clip(p_raw, BCE_EPS, 1.0 - BCE_EPS)
    g = (-y / p + (1.0 - y) / (1.0 - p)) / max(p.size, 1)
    return np.where(p_raw == p, g, 0.0)


# -- initialisation ----------------------------------------------------------


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def orthogonal(rng: np.random.Generator, shape) -> np.ndarray:
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    return np.ascontiguousarray(q.T if rows < cols else q)


# -- ADAM --------------------------------------------------------------------


@dataclass
class Hyper:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 25

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState, hyper: Hyper) -> None:
    """Bias-corrected ADAM update, in place.

    Every gradient is validated before anything is written, so a failing call
    leaves both ``params`` and ``state`` untouched.
    """
    if set(grads) != set(params):
        raise KeyError(f"gradient keys {sorted(grads)} do not match parameters {sorted(params)}")
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter has {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)
    for name in params:
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])

    t = state.t + 1
    b1, b2 = hyper.beta1, hyper.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    updates = {}
    for name, g in grads.items():
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        step = hyper.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + hyper.epsilon)
        updates[name] = (m, v, step)
    for name, (m, v, step) in updates.items():
        state.m[name] = m
        state.v[name] = v
        params[name] -= step
    state.t = t


# -- gradient checking -------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    tolerance: float
    failures: list[str]

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    def __str__(self):
        status = "ok" if self.passed else "FAILED: " + ", ".join(self.failures)
        return f"grad_check worst={self.worst:.3e} tol={self.tolerance:.0e} {status}"


def relative_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def grad_check(
    loss_and_grad: Callable[[dict[str, np.ndarray]], tuple[float, dict[str, np.ndarray]]],
    params: dict[str, np.ndarray],
    perturbation: float = 1e-5,
    tolerance: float = 1e-4,
    names=None,
    loss_fn: Callable[[dict[str, np.ndarray]], float] | None = None,
) -> GradCheckReport:
    """Compare analytic gradients against central differences, coordinate by coordinate.

    ``loss_and_grad`` must read the arrays in ``params`` live: coordinates are
    perturbed in place and restored afterwards.  ``loss_fn`` is an optional
    forward-only shortcut used for the perturbed evaluations.
    """
    if loss_fn is None:
        loss_fn = lambda q: loss_and_grad(q)[0]  # noqa: E731
    _, analytic = loss_and_grad(params)
    analytic = {k: np.array(v, dtype=np.float64) for k, v in analytic.items()}
    report = {}
    failures = []
    for name in names or params:
        p = params[name]
        numeric = np.empty(p.shape)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + perturbation
            f_plus = loss_fn(params)
            p[idx] = orig - perturbation
            f_minus = loss_fn(params)
            p[idx] = orig
            numeric[idx] = (f_plus - f_minus) / (2.0 * perturbation)
        err = float(np.max(relative_error(analytic[name], numeric))) if p.size else 0.0
        report[name] = err
        if not err < tolerance:
            failures.append(name)
    return GradCheckReport(report, tolerance, failures)

"""LSTM / BiLSTM layers and the classifier model built on top of them.

Gate weights are packed column-wise as ``[i | f | o | g]``: input weights
``W`` are ``(d, 4N)``, recurrent weights ``U`` are ``(N, 4N)`` and the bias
``b`` is ``(4N,)``.  Hidden sequences are stored one row per frame, ``(T, N)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from raec import kernels
from raec.nn import ShapeError, bce_grad, bce_loss, glorot_uniform, orthogonal, sigmoid
from raec.pooling import (
    PoolingKind,
    feature_backward,
    feature_forward,
    prediction_backward,
    prediction_forward,
)


@dataclass(frozen=True)
class LstmParams:
    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        N = self.U.shape[0]
        if self.U.shape != (N, 4 * N) or self.W.ndim != 2 or self.W.shape[1] != 4 * N or self.b.shape != (4 * N,):
            raise ShapeError(f"inconsistent LSTM shapes W{self.W.shape} U{self.U.shape} b{self.b.shape}")

    @property
    def n_units(self) -> int:
        return self.U.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W.shape[0]


def lstm_cell(x_t, h_prev, c_prev, params: LstmParams):
    x_t = np.asarray(x_t, dtype=np.float64)
    N = params.n_units
    if x_t.shape != (params.input_dim,) or np.shape(h_prev) != (N,) or np.shape(c_prev) != (N,):
        raise ShapeError(
            f"lstm_cell: x{x_t.shape} h{np.shape(h_prev)} c{np.shape(c_prev)} vs input_dim={params.input_dim}, N={N}"
        )
    a = x_t @ params.W + h_prev @ params.U + params.b
    i, f, o = sigmoid(a[:N]), sigmoid(a[N : 2 * N]), sigmoid(a[2 * N : 3 * N])
    g = np.tanh(a[3 * N :])
    c = f * c_prev + i * g
    return o * np.tanh(c), c


def _check_input(X, params: LstmParams) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise ShapeError(f"expected input of shape (T, {params.input_dim}), got {X.shape}")
    return X


def lstm_forward(X, params: LstmParams) -> np.ndarray:
    """Hidden states ``(T, N)`` from zero initial state."""
    X = _check_input(X, params)
    xproj = (X @ params.W + params.b)[:, None, :]
    H, _, _, _ = kernels.forward_scan(xproj, params.U)
    return H[:, 0, :]


def bilstm_forward(X, fwd: LstmParams, bwd: LstmParams) -> np.ndarray:
    """Forward half then time-reversed backward half, ``(T, N_fwd + N_bwd)``."""
    X = _check_input(X, fwd)
    _check_input(X, bwd)
    return np.concatenate([lstm_forward(X, fwd), lstm_forward(X[::-1], bwd)[::-1]], axis=1)


def frame_predictions(H, head_w, head_b) -> np.ndarray:
    H = np.asarray(H, dtype=np.float64)
    head_w = np.asarray(head_w, dtype=np.float64)
    if H.ndim != 2 or head_w.shape != (H.shape[1],):
        raise ShapeError(f"head of shape {head_w.shape} does not fit hidden sequence {H.shape}")
    return sigmoid(H @ head_w + np.ravel(head_b)[0])


def utterance_from_feature(h, head_w, head_b) -> float:
    h = np.asarray(h, dtype=np.float64)
    head_w = np.asarray(head_w, dtype=np.float64)
    if h.shape != head_w.shape or h.ndim != 1:
        raise ShapeError(f"head of shape {head_w.shape} does not fit pooled feature {h.shape}")
    return float(sigmoid(h @ head_w + np.ravel(head_b)[0]))


# -- model -------------------------------------------------------------------


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    units: int = 100
    n_layers: int = 1
    direction: str = "uni"
    pooling: PoolingKind = PoolingKind.PRED_MAX

    def __post_init__(self):
        object.__setattr__(self, "pooling", PoolingKind.parse(self.pooling))
        if self.n_layers not in (1, 2):
            raise ValueError(f"n_layers must be 1 or 2, got {self.n_layers}")
        if self.direction not in ("uni", "bi"):
            raise ValueError(f"direction must be 'uni' or 'bi', got {self.direction!r}")
        if self.units < 1 or self.input_dim < 1:
            raise ValueError("units and input_dim must be positive")
        if self.direction == "bi" and self.units % 2:
            raise ValueError(f"bi-directional layers split units evenly; {self.units} is odd")

    @property
    def directions(self) -> tuple[str, ...]:
        return ("fwd", "bwd") if self.direction == "bi" else ("",)

    @property
    def units_per_direction(self) -> int:
        return self.units // len(self.directions)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pooling"] = self.pooling.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def _prefix(layer: int, direction: str) -> str:
    return f"lstm{layer}.{direction}." if direction else f"lstm{layer}."


class AecModel:
    """Stacked (Bi)LSTM, one of nine pooling heads, dense-sigmoid output.

    ``params`` holds every trainable array; ``buffers`` holds the per-band
    input standardisation (``norm.mean``, ``norm.std``) fitted on training
    features.  FeatAttention scores frames with ``head.w`` / ``head.b``
    themselves, so the sharing with the output head is by construction.
    """

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray], buffers: dict[str, np.ndarray] | None = None):
        self.config = config
        self.params = params
        if buffers is None:
            buffers = {"norm.mean": np.zeros(config.input_dim), "norm.std": np.ones(config.input_dim)}
        self.buffers = buffers

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int) -> "AecModel":
        rng = np.random.default_rng(seed)
        params: dict[str, np.ndarray] = {}
        n = config.units_per_direction
        d = config.input_dim
        for layer in range(config.n_layers):
            for direction in config.directions:
                p = _prefix(layer, direction)
                params[p + "W"] = glorot_uniform(rng, d, 4 * n, (d, 4 * n))
                params[p + "U"] = orthogonal(rng, (n, 4 * n))
                b = np.zeros(4 * n)
                b[n : 2 * n] = 1.0
                params[p + "b"] = b
            d = config.units
        params["head.w"] = glorot_uniform(rng, config.units, 1, (config.units,))
        params["head.b"] = np.zeros(1)
        if config.pooling is PoolingKind.PRED_ATTENTION:
            # no bias: the weighted mean is invariant to a shift of all scores
            params["att.w"] = glorot_uniform(rng, config.units, 1, (config.units,))
        return cls(config, params)

    def copy(self) -> "AecModel":
        return AecModel(
            self.config,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
        )

    def lstm_params(self, layer: int, direction: str = "") -> LstmParams:
        p = _prefix(layer, direction)
        return LstmParams(self.params[p + "W"], self.params[p + "U"], self.params[p + "b"])

    def fit_normalizer(self, X, chunk: int = 100) -> None:
        """Per-band mean / std over all frames of a ``(B, T, F)`` training batch.

        A non-array ``X`` (e.g. streamed features) is read in chunks, two passes.
        """
        F = self.config.input_dim
        if isinstance(X, np.ndarray):
            flat = X.astype(np.float64, copy=False).reshape(-1, F)
            mean, std = flat.mean(axis=0), flat.std(axis=0)
        else:
            n, total = 0, np.zeros(F)
            for i in range(0, len(X), chunk):
                part = np.asarray(X[i : i + chunk], dtype=np.float64).reshape(-1, F)
                total += part.sum(axis=0)
                n += part.shape[0]
            mean = total / n
            sq = np.zeros(F)
            for i in range(0, len(X), chunk):
                part = np.asarray(X[i : i + chunk], dtype=np.float64).reshape(-1, F)
                sq += np.square(part - mean).sum(axis=0)
            std = np.sqrt(sq / n)
        self.buffers["norm.mean"] = mean
        self.buffers["norm.std"] = np.maximum(std, 1e-6)

    # -- forward / backward ---------------------------------------------------

    def _prepare(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            X = X[None]
        if X.ndim != 3 or X.shape[2] != self.config.input_dim:
            raise ShapeError(f"expected features (B, T, {self.config.input_dim}), got {X.shape}")
        if X.shape[1] == 0:
            raise ShapeError("empty utterance")
        Xn = (X - self.buffers["norm.mean"]) / self.buffers["norm.std"]
        return np.ascontiguousarray(Xn.transpose(1, 0, 2))

    def forward(self, X):
        """Utterance scores ``(B,)`` and the cache for :meth:`backward`."""
        cfg = self.config
        P = self.params
        inp = self._prepare(X)
        T, B, _ = inp.shape
        layers = []
        for layer in range(cfg.n_layers):
            outs, dirs = [], []
            for direction in cfg.directions:
                p = _prefix(layer, direction)
                x = inp[::-1] if direction == "bwd" else inp
                x = np.ascontiguousarray(x)
                xproj = (x.reshape(T * B, -1) @ P[p + "W"] + P[p + "b"]).reshape(T, B, -1)
                H, C, TC, A = kernels.forward_scan(xproj, P[p + "U"])
                dirs.append((x, H, C, TC, A))
                outs.append(H[::-1] if direction == "bwd" else H)
            layers.append(dirs)
            inp = np.concatenate(outs, axis=2) if len(outs) > 1 else outs[0]
        Htop = inp
        w, b = P["head.w"], P["head.b"]
        kind = cfg.pooling
        if kind.on_feature:
            h, pcache = feature_forward(kind, Htop, w, b)
            y = sigmoid(h @ w + b[0])
            cache = (layers, Htop, h, pcache, None, None)
        else:
            Yf = sigmoid(Htop @ w + b[0])
            Za = Htop @ P["att.w"] if kind is PoolingKind.PRED_ATTENTION else None
            y, pcache = prediction_forward(kind, Yf, Za)
            cache = (layers, Htop, Yf, pcache, Za, None)
        return np.atleast_1d(y), cache

    def backward(self, cache, dy) -> dict[str, np.ndarray]:
        cfg = self.config
        P = self.params
        layers, Htop, mid, pcache, Za, _ = cache
        grads = {k: np.zeros_like(v) for k, v in P.items()}
        w = P["head.w"]
        kind = cfg.pooling
        if kind.on_feature:
            h = mid
            y = sigmoid(h @ w + P["head.b"][0])
            dz = dy * y * (1.0 - y)
            grads["head.w"] += h.T @ dz
            grads["head.b"] += dz.sum()
            dH, dw, db = feature_backward(kind, dz[:, None] * w, pcache, Htop, w)
            grads["head.w"] += dw
            grads["head.b"] += db
        else:
            Yf = mid
            dYf, dZa = prediction_backward(kind, dy, pcache, Yf, Za)
            dzf = dYf * Yf * (1.0 - Yf)
            grads["head.w"] += np.einsum("tb,tbn->n", dzf, Htop)
            grads["head.b"] += dzf.sum()
            dH = dzf[:, :, None] * w
            if dZa is not None:
                grads["att.w"] += np.einsum("tb,tbn->n", dZa, Htop)
                dH = dH + dZa[:, :, None] * P["att.w"]

        n = cfg.units_per_direction
        for layer in range(cfg.n_layers - 1, -1, -1):
            d_inp = None
            for k, direction in enumerate(cfg.directions):
                p = _prefix(layer, direction)
                x, H, C, TC, A = layers[layer][k]
                T, B, d = x.shape
                dHd = dH[:, :, k * n : (k + 1) * n]
                if direction == "bwd":
                    dHd = dHd[::-1]
                dZ = kernels.backward_scan(dHd, C, TC, A, P[p + "U"])
                dZ2 = dZ.reshape(T * B, -1)
                grads[p + "W"] += x.reshape(T * B, d).T @ dZ2
                grads[p + "b"] += dZ2.sum(axis=0)
                if T > 1:
                    grads[p + "U"] += H[:-1].reshape((T - 1) * B, n).T @ dZ[1:].reshape((T - 1) * B, -1)
                if layer > 0:
                    dx = (dZ2 @ P[p + "W"].T).reshape(T, B, d)
                    if direction == "bwd":
                        dx = dx[::-1]
                    d_inp = dx if d_inp is None else d_inp + dx
            dH = d_inp
        return grads

    def loss(self, X, labels) -> float:
        y, _ = self.forward(X)
        return bce_loss(y, labels)

    def loss_and_grad(self, X, labels):
        y, cache = self.forward(X)
        return bce_loss(y, labels), self.backward(cache, bce_grad(y, labels))

    def score(self, X, batch_size: int = 100) -> np.ndarray:
        if isinstance(X, np.ndarray) or getattr(X, "ndim", None) != 3:
            X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            X = X[None]
        out = [self.forward(X[i : i + batch_size])[0] for i in range(0, X.shape[0], batch_size)]
        return np.concatenate(out) if out else np.zeros(0)

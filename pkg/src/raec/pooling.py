"""The nine utterance-level pooling methods, forward and backward.

Feature-side kinds collapse the hidden sequence ``H`` into one vector that the
final dense-sigmoid head turns into ``y``.  Prediction-side kinds first map
every frame through that head to ``y_t`` and then aggregate the scalars.

Batched routines work on time-major arrays: ``H`` is ``(T, B, N)`` and frame
predictions are ``(T, B)``.  The single-sequence helpers take ``H`` as
``(T, N)`` (one row per frame).
"""

from __future__ import annotations

from enum import Enum

import numpy as np

ATTN_CLAMP = 30.0
LINSOFT_GUARD = 1e-12


class PoolingKind(str, Enum):
    FEAT_LAST_FRAME = "LastFrame"
    FEAT_ATTENTION = "Attention"
    FEAT_MAX = "MaxPooling"
    FEAT_AVG = "AvgPooling"
    PRED_MAX = "Y.MaxPooling"
    PRED_AVG = "Y.AvgPooling"
    PRED_LIN_SOFTMAX = "Y.LinSoftmax"
    PRED_EXP_SOFTMAX = "Y.ExpSoftmax"
    PRED_ATTENTION = "Y.Attention"

    @property
    def on_prediction(self) -> bool:
        return self.value.startswith("Y.")

    @property
    def on_feature(self) -> bool:
        return not self.on_prediction

    @classmethod
    def parse(cls, name: "str | PoolingKind") -> "PoolingKind":
        if isinstance(name, cls):
            return name
        for kind in cls:
            if name in (kind.value, kind.name):
                return kind
        raise ValueError(f"unknown pooling kind {name!r}; expected one of {[k.value for k in cls]}")

    def __str__(self):
        return self.value


FEATURE_KINDS = tuple(k for k in PoolingKind if k.on_feature)
PREDICTION_KINDS = tuple(k for k in PoolingKind if k.on_prediction)
MAX_KINDS = (PoolingKind.FEAT_MAX, PoolingKind.PRED_MAX)


class PoolingError(ValueError):
    pass


def _softmax(s, axis=0):
    e = np.exp(s - s.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


# -- batched feature pooling -------------------------------------------------


def feature_forward(kind: PoolingKind, H, head_w, head_b):
    """Pool ``H`` (T, B, N) to ``(B, N)``.  Returns ``(h, cache)``.

    FeatAttention scores frames with the final head's own ``(head_w, head_b)``.
    """
    if not kind.on_feature:
        raise PoolingError(f"{kind} is not a feature-side pooling")
    T = H.shape[0]
    if T == 0:
        raise PoolingError("cannot pool an empty sequence")
    if kind is PoolingKind.FEAT_LAST_FRAME:
        return H[-1].copy(), None
    if kind is PoolingKind.FEAT_MAX:
        idx = np.argmax(H, axis=0)  # first index on ties
        return np.take_along_axis(H, idx[None], axis=0)[0], idx
    if kind is PoolingKind.FEAT_AVG:
        return H.mean(axis=0), None
    a = _softmax(H @ head_w + head_b[0], axis=0)  # (T, B)
    return np.einsum("tb,tbn->bn", a, H), a


def feature_backward(kind: PoolingKind, dh, cache, H, head_w):
    """Returns ``(dH, d_head_w, d_head_b)``; head grads are nonzero only for attention."""
    T = H.shape[0]
    dH = np.zeros_like(H)
    dw = np.zeros_like(head_w)
    db = np.zeros(1)
    if kind is PoolingKind.FEAT_LAST_FRAME:
        dH[-1] = dh
    elif kind is PoolingKind.FEAT_MAX:
        np.put_along_axis(dH, cache[None], dh[None], axis=0)
    elif kind is PoolingKind.FEAT_AVG:
        dH[:] = dh / T
    else:
        a = cache
        dH += a[:, :, None] * dh[None]
        da = np.einsum("bn,tbn->tb", dh, H)
        ds = a * (da - (a * da).sum(axis=0, keepdims=True))
        dH += ds[:, :, None] * head_w
        dw = np.einsum("tb,tbn->n", ds, H)
        db = np.array([ds.sum()])
    return dH, dw, db


# -- batched prediction pooling ----------------------------------------------


def prediction_forward(kind: PoolingKind, Y, Z=None):
    """Aggregate frame predictions ``Y`` (T, B) into ``(B,)``.

    ``Z`` holds the dedicated attention scores (T, B) for PredAttention.
    Returns ``(y, cache)``.
    """
    if not kind.on_prediction:
        raise PoolingError(f"{kind} is not a prediction-side pooling")
    if Y.shape[0] == 0:
        raise PoolingError("cannot pool an empty sequence")
    if kind is PoolingKind.PRED_MAX:
        idx = np.argmax(Y, axis=0)
        return np.take_along_axis(Y, idx[None], axis=0)[0], idx
    if kind is PoolingKind.PRED_AVG:
        return Y.mean(axis=0), None
    if kind is PoolingKind.PRED_LIN_SOFTMAX:
        # floor, not offset: a constant sequence stays an exact fixed point
        raw = Y.sum(axis=0)
        s1 = np.maximum(raw, LINSOFT_GUARD)
        s2 = (Y * Y).sum(axis=0)
        return s2 / s1, (s1, s2, raw > LINSOFT_GUARD)
    if kind is PoolingKind.PRED_EXP_SOFTMAX:
        w = np.exp(Y)
        total = w.sum(axis=0)
        y = (w * Y).sum(axis=0) / total
        return y, (w / total, y)
    if Z is None:
        raise PoolingError("Y.Attention needs attention scores")
    w = np.exp(np.clip(Z, -ATTN_CLAMP, ATTN_CLAMP))
    total = w.sum(axis=0)
    y = (w * Y).sum(axis=0) / total
    return y, (w / total, y)


def prediction_backward(kind: PoolingKind, dy, cache, Y, Z=None):
    """Returns ``(dY, dZ)``; ``dZ`` is None except for PredAttention."""
    T = Y.shape[0]
    dZ = None
    if kind is PoolingKind.PRED_MAX:
        dY = np.zeros_like(Y)
        np.put_along_axis(dY, cache[None], dy[None], axis=0)
    elif kind is PoolingKind.PRED_AVG:
        dY = np.broadcast_to(dy / T, Y.shape).copy()
    elif kind is PoolingKind.PRED_LIN_SOFTMAX:
        s1, s2, live = cache
        dY = dy * (2.0 * Y / s1 - np.where(live, s2 / (s1 * s1), 0.0))
    elif kind is PoolingKind.PRED_EXP_SOFTMAX:
        wn, y = cache
        dY = dy * wn * (1.0 + Y - y)
    else:
        wn, y = cache
        dY = dy * wn
        inside = np.abs(Z) < ATTN_CLAMP
        dZ = np.where(inside, dy * wn * (Y - y), 0.0)
    return dY, dZ


# -- single-sequence API -----------------------------------------------------


def _as_sequence(H) -> np.ndarray:
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2:
        raise PoolingError(f"expected a (T, N) hidden sequence, got shape {H.shape}")
    if H.shape[0] == 0:
        raise PoolingError("cannot pool an empty sequence")
    return H


def attention_weights_feature(H, head_w, head_b) -> np.ndarray:
    """Softmax over frames of the shared head's scores ``w . h_t + b``."""
    H = _as_sequence(H)
    return _softmax(H @ np.asarray(head_w, dtype=np.float64) + np.ravel(head_b)[0])


def attention_weights_prediction(H, att_w, att_b=0.0) -> np.ndarray:
    """Unnormalised positive weights ``exp(clamp(u . h_t + c, +-30))``."""
    H = _as_sequence(H)
    z = H @ np.asarray(att_w, dtype=np.float64) + np.ravel(att_b)[0]
    return np.exp(np.clip(z, -ATTN_CLAMP, ATTN_CLAMP))


def pool_feature(kind, H, head=None) -> np.ndarray:
    """``head`` is the final dense head ``(w, b)``; only FeatAttention reads it."""
    kind = PoolingKind.parse(kind)
    H = _as_sequence(H)
    if kind is PoolingKind.FEAT_ATTENTION:
        if head is None:
            raise PoolingError("feature attention needs the final head (w, b)")
        w, b = np.asarray(head[0], dtype=np.float64), np.ravel(head[1]).astype(np.float64)
    else:
        w, b = np.zeros(H.shape[1]), np.zeros(1)
    h, _ = feature_forward(kind, H[:, None, :], w, b)
    return h[0]


def pool_prediction(kind, y_seq, head=None, H=None) -> float:
    """``head`` is the dedicated attention head, ``u`` or ``(u, c)``; only PredAttention reads it (with ``H``)."""
    kind = PoolingKind.parse(kind)
    Y = np.asarray(y_seq, dtype=np.float64).reshape(-1, 1)
    Z = None
    if kind is PoolingKind.PRED_ATTENTION:
        if head is None or H is None:
            raise PoolingError("prediction attention needs its head (u, c) and the hidden sequence")
        H = _as_sequence(H)
        u, c = head if isinstance(head, tuple) else (head, 0.0)
        Z = (H @ np.asarray(u, dtype=np.float64) + np.ravel(c)[0])[:, None]
    y, _ = prediction_forward(kind, Y, Z)
    return float(y[0])


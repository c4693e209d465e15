"""Time-recurrence kernels for the LSTM layer.

All arrays are time-major: ``(T, B, ...)``.  Gate columns are packed as
``[input | forget | output | candidate]``, each ``N`` wide.

Two implementations exist for each scan.  The numba versions win whenever the
per-step work is small (backward always, forward for small batches); the numpy
versions are the fallback and the reference.  ``forward_scan`` and
``backward_scan`` pick one.
"""

import numpy as np

from raec._accel import HAVE_NUMBA, njit

# numba's scalar exp/tanh are slower than numpy's vectorized ones, so the
# numba forward only pays off while per-step numpy call overhead dominates.
FORWARD_NUMBA_MAX_BATCH = 4


def forward_scan_numpy(xproj, U):
    """Run the recurrence given precomputed input projections ``x_t W + b``.

    Returns hidden states ``H``, cell states ``C``, ``tanh(C)`` and the
    activated gates ``A`` (needed by the backward scan).
    """
    T, B, G = xproj.shape
    N = G // 4
    H = np.empty((T, B, N))
    C = np.empty((T, B, N))
    TC = np.empty((T, B, N))
    A = np.empty((T, B, G))
    h = np.zeros((B, N))
    c = np.zeros((B, N))
    with np.errstate(over="ignore"):
        return _forward_loop(xproj, U, H, C, TC, A, h, c, N)


def _forward_loop(xproj, U, H, C, TC, A, h, c, N):
    for t in range(xproj.shape[0]):
        a = xproj[t] + h @ U
        s = 1.0 / (1.0 + np.exp(-a[:, : 3 * N]))
        g = np.tanh(a[:, 3 * N :])
        c = s[:, N : 2 * N] * c + s[:, :N] * g
        tc = np.tanh(c)
        h = s[:, 2 * N :] * tc
        A[t, :, : 3 * N] = s
        A[t, :, 3 * N :] = g
        H[t] = h
        C[t] = c
        TC[t] = tc
    return H, C, TC, A


@njit(cache=True)
def _sigmoid(x):
    if x >= 0.0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def forward_scan_numba(xproj, U):
    T, B, G = xproj.shape
    N = G // 4
    H = np.empty((T, B, N))
    C = np.empty((T, B, N))
    TC = np.empty((T, B, N))
    A = np.empty((T, B, G))
    h = np.zeros((B, N))
    c = np.zeros((B, N))
    for t in range(T):
        a = np.dot(h, U)
        for b in range(B):
            for k in range(3 * N):
                A[t, b, k] = _sigmoid(a[b, k] + xproj[t, b, k])
            for k in range(3 * N, G):
                A[t, b, k] = np.tanh(a[b, k] + xproj[t, b, k])
            for n in range(N):
                cn = A[t, b, N + n] * c[b, n] + A[t, b, n] * A[t, b, 3 * N + n]
                tc = np.tanh(cn)
                c[b, n] = cn
                h[b, n] = A[t, b, 2 * N + n] * tc
                C[t, b, n] = cn
                TC[t, b, n] = tc
                H[t, b, n] = h[b, n]
    return H, C, TC, A


def backward_scan_numpy(dH, C, TC, A, U):
    """Gradients w.r.t. the pre-activation gate inputs, shape ``(T, B, 4N)``.

    ``dH`` holds the loss gradient arriving at each hidden state from above;
    the recurrent contributions are accumulated here.
    """
    T, B, N = dH.shape
    dZ = np.empty((T, B, 4 * N))
    UT = np.ascontiguousarray(U.T)
    dh_rec = np.zeros((B, N))
    dc_rec = np.zeros((B, N))
    zero = np.zeros((B, N))
    for t in range(T - 1, -1, -1):
        a = A[t]
        i, f, o, g = a[:, :N], a[:, N : 2 * N], a[:, 2 * N : 3 * N], a[:, 3 * N :]
        tc = TC[t]
        c_prev = C[t - 1] if t > 0 else zero
        dh = dH[t] + dh_rec
        dc = dc_rec + dh * o * (1.0 - tc * tc)
        dz = dZ[t]
        dz[:, :N] = dc * g * i * (1.0 - i)
        dz[:, N : 2 * N] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * N : 3 * N] = dh * tc * o * (1.0 - o)
        dz[:, 3 * N :] = dc * i * (1.0 - g * g)
        dc_rec = dc * f
        dh_rec = dz @ UT
    return dZ


@njit(cache=True)
def backward_scan_numba(dH, C, TC, A, U):
    T, B, N = dH.shape
    G = 4 * N
    UT = np.ascontiguousarray(U.T)
    dZ = np.empty((T, B, G))
    dh_rec = np.zeros((B, N))
    dc_rec = np.zeros((B, N))
    for t in range(T - 1, -1, -1):
        dz = dZ[t]
        for b in range(B):
            for n in range(N):
                i = A[t, b, n]
                f = A[t, b, N + n]
                o = A[t, b, 2 * N + n]
                g = A[t, b, 3 * N + n]
                tc = TC[t, b, n]
                c_prev = C[t - 1, b, n] if t > 0 else 0.0
                dh = dH[t, b, n] + dh_rec[b, n]
                dc = dc_rec[b, n] + dh * o * (1.0 - tc * tc)
                dz[b, n] = dc * g * i * (1.0 - i)
                dz[b, N + n] = dc * c_prev * f * (1.0 - f)
                dz[b, 2 * N + n] = dh * tc * o * (1.0 - o)
                dz[b, 3 * N + n] = dc * i * (1.0 - g * g)
                dc_rec[b, n] = dc * f
        dh_rec = np.dot(dz, UT)
    return dZ


def forward_scan(xproj, U):
    xproj = np.ascontiguousarray(xproj, dtype=np.float64)
    U = np.ascontiguousarray(U, dtype=np.float64)
    if HAVE_NUMBA and xproj.shape[1] <= FORWARD_NUMBA_MAX_BATCH:
        return forward_scan_numba(xproj, U)
    return forward_scan_numpy(xproj, U)


def backward_scan(dH, C, TC, A, U):
    dH = np.ascontiguousarray(dH, dtype=np.float64)
    U = np.ascontiguousarray(U, dtype=np.float64)
    if HAVE_NUMBA:
        return backward_scan_numba(dH, C, TC, A, U)
    return backward_scan_numpy(dH, C, TC, A, U)

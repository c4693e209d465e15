import os
import subprocess
import sys

import numpy as np
import pytest

from raec import _accel, kernels
from raec.nn import grad_check
from raec.seqmodel import AecModel, ModelConfig

needs_numba = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba disabled or unavailable")


def scan_inputs(T, B, N, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(T, B, 4 * N)), np.ascontiguousarray(rng.normal(scale=0.4, size=(N, 4 * N))), rng.normal(size=(T, B, N))


@needs_numba
@pytest.mark.parametrize("B", [1, 3, 7])
def test_backends_agree(B):
    xproj, U, dH = scan_inputs(11, B, 5, seed=B)
    a = kernels.forward_scan_numpy(xproj, U)
    b = kernels.forward_scan_numba(xproj, U)
    for u, v in zip(a, b):
        np.testing.assert_allclose(u, v, atol=1e-13, rtol=0)
    np.testing.assert_allclose(
        kernels.backward_scan_numpy(dH, *a[1:], U), kernels.backward_scan_numba(dH, *b[1:], U), atol=1e-13, rtol=0
    )


def test_dispatch_matches_a_backend():
    xproj, U, _ = scan_inputs(5, 2, 3)
    got = kernels.forward_scan(xproj, U)[0]
    np.testing.assert_allclose(got, kernels.forward_scan_numpy(xproj, U)[0], atol=1e-13)


def test_scan_shapes():
    xproj, U, dH = scan_inputs(4, 2, 3)
    H, C, TC, A = kernels.forward_scan(xproj, U)
    assert H.shape == C.shape == TC.shape == (4, 2, 3) and A.shape == (4, 2, 12)
    np.testing.assert_allclose(TC, np.tanh(C), atol=1e-15, rtol=0)
    assert kernels.backward_scan(dH, C, TC, A, U).shape == (4, 2, 12)


def test_model_gradient_under_active_backend():
    m = AecModel.initialize(ModelConfig(3, 4, 1, "uni", "Y.AvgPooling"), 2)
    X = np.random.default_rng(2).normal(size=(2, 6, 3))
    labels = np.array([1.0, 0.0])
    assert grad_check(lambda p: m.loss_and_grad(X, labels), m.params, loss_fn=lambda p: m.loss(X, labels)).passed


PROBE = """
import numpy as np
from raec import _accel
from raec.seqmodel import AecModel, ModelConfig
m = AecModel.initialize(ModelConfig(3, 4, 1, "uni", "Y.MaxPooling"), 0)
X = np.random.default_rng(0).normal(size=(2, 6, 3))
loss, g = m.loss_and_grad(X, np.array([1.0, 0.0]))
print(_accel.backend(), repr(loss), repr(float(np.abs(g["lstm0.U"]).sum())))
"""


def run_probe(flag):
    env = dict(os.environ)
    env.pop("RAEC_DISABLE_NUMBA", None)
    if flag is not None:
        env["RAEC_DISABLE_NUMBA"] = flag
    out = subprocess.run([sys.executable, "-c", PROBE], env=env, capture_output=True, text=True, check=True)
    name, loss, gsum = out.stdout.split()
    return name, float(loss), float(gsum)


def test_env_flag_forces_numpy_fallback():
    name, loss, gsum = run_probe("1")
    assert name == "numpy"
    ref_name, ref_loss, ref_gsum = run_probe(None)
    assert ref_name in ("numba", "numpy")
    assert abs(loss - ref_loss) <= 1e-12 and abs(gsum - ref_gsum) <= 1e-10


def test_numpy_fallback_decorator_is_identity():
    if _accel.HAVE_NUMBA:
        pytest.skip("only meaningful with the fallback active")
    f = lambda x: x + 1  # noqa: E731
    assert _accel.njit(f) is f and _accel.njit(cache=True)(f) is f

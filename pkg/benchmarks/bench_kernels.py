"""Compare the numba and pure-numpy LSTM scan kernels.

    python benchmarks/bench_kernels.py [--T 298] [--units 32] [--batches 1,4,25,100] [--repeats 5]

Reports the best-of-N wall time per kernel and batch size, checks that both
backends agree, and times one full training step (forward + backward) with
the dispatcher the package actually uses.
"""

import argparse
import time

import numpy as np

from raec import _accel, kernels
from raec.seqmodel import AecModel, ModelConfig


def best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--T", type=int, default=298)
    ap.add_argument("--units", type=int, default=32)
    ap.add_argument("--batches", default="1,4,25,100")
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    print(f"backend selected by the package: {_accel.backend()}")
    if not _accel.HAVE_NUMBA:
        print("numba unavailable or disabled (RAEC_DISABLE_NUMBA); timing the numpy kernels only")
    rng = np.random.default_rng(0)
    N = args.units
    U = np.ascontiguousarray(rng.normal(scale=0.3, size=(N, 4 * N)))
    print(f"{'batch':>6} {'kernel':>9} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8} {'max |diff|':>11}")
    for B in (int(b) for b in args.batches.split(",")):
        xproj = rng.normal(size=(args.T, B, 4 * N))
        dH = rng.normal(size=(args.T, B, N))
        fw_np = kernels.forward_scan_numpy(xproj, U)
        t_np = best_of(lambda: kernels.forward_scan_numpy(xproj, U), args.repeats)
        tb_np = best_of(lambda: kernels.backward_scan_numpy(dH, *fw_np[1:], U), args.repeats)
        if _accel.HAVE_NUMBA:
            fw_nb = kernels.forward_scan_numba(xproj, U)  # also triggers compilation
            kernels.backward_scan_numba(dH, *fw_nb[1:], U)
            t_nb = best_of(lambda: kernels.forward_scan_numba(xproj, U), args.repeats)
            tb_nb = best_of(lambda: kernels.backward_scan_numba(dH, *fw_nb[1:], U), args.repeats)
            d_fw = float(np.max(np.abs(fw_np[0] - fw_nb[0])))
            d_bw = float(np.max(np.abs(kernels.backward_scan_numpy(dH, *fw_np[1:], U) - kernels.backward_scan_numba(dH, *fw_nb[1:], U))))
            print(f"{B:>6} {'forward':>9} {1e3 * t_np:>10.2f} {1e3 * t_nb:>10.2f} {t_np / t_nb:>8.2f} {d_fw:>11.2e}")
            print(f"{B:>6} {'backward':>9} {1e3 * tb_np:>10.2f} {1e3 * tb_nb:>10.2f} {tb_np / tb_nb:>8.2f} {d_bw:>11.2e}")
        else:
            print(f"{B:>6} {'forward':>9} {1e3 * t_np:>10.2f} {'-':>10} {'-':>8} {'-':>11}")
            print(f"{B:>6} {'backward':>9} {1e3 * tb_np:>10.2f} {'-':>10} {'-':>8} {'-':>11}")

    model = AecModel.initialize(ModelConfig(64, N, 1, "uni", "Y.MaxPooling"), 0)
    X = rng.normal(size=(25, args.T, 64))
    labels = np.arange(25) % 2
    model.loss_and_grad(X, labels)
    t = best_of(lambda: model.loss_and_grad(X, labels), args.repeats)
    print(f"training step, batch 25 ({_accel.backend()} dispatch): {1e3 * t:.1f} ms")


if __name__ == "__main__":
    main()

"""Built-in verification suites: gradients, pooling algebra, oracle equivalence, synthesis fidelity.

Each suite returns a :class:`SuiteResult` with pass/total counts.  The oracles
here are deliberately naive (scalar loops, per-frame DSP, slice-add mixing) so
they share no code path with the vectorised implementations they check.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from raec.dsp import AmplitudeWarning, FrontendConfig, Waveform, compute_lfbe, frame_signal, mel_bank, next_pow2
from raec.nn import grad_check
from raec.pooling import MAX_KINDS, PoolingKind, pool_feature, pool_prediction
from raec.seqmodel import AecModel, LstmParams, ModelConfig, bilstm_forward, lstm_forward

SLACK = 1e-12


@dataclass
class SuiteResult:
    name: str
    passed: int = 0
    total: int = 0
    worst: float = 0.0
    seconds: float = 0.0
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.total > 0 and self.passed == self.total

    def record(self, ok: bool, what: str) -> None:
        self.total += 1
        if ok:
            self.passed += 1
        else:
            self.failures.append(what)

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        return f"{self.name}: {self.passed}/{self.total} passed (worst {self.worst:.3g}, {self.seconds:.1f} s) {status}"


# -- gradients ---------------------------------------------------------------


def argmax_margin(model: AecModel, X) -> float:
    """Smallest top-1 minus top-2 gap of whatever a max pooling selects over time."""
    _, cache = model.forward(X)
    _, Htop, mid, _, _, _ = cache
    vals = Htop if model.config.pooling is PoolingKind.FEAT_MAX else mid
    if vals.shape[0] < 2:
        return math.inf
    top2 = np.sort(vals, axis=0)[-2:]
    return float(np.min(top2[1] - top2[0]))


def min_abs_gradient(model: AecModel, X, labels) -> float:
    _, grads = model.loss_and_grad(X, labels)
    return min(float(np.min(np.abs(g))) for g in grads.values() if g.size)


def gradient_suite(seeds=range(20), kinds=tuple(PoolingKind), units: int = 8, input_dim: int = 4,
                   T: int = 6, batch: int = 2, tolerance: float = 1e-4, min_margin: float = 1e-4,
                   min_grad: float = 1e-6) -> SuiteResult:
    """Central-difference checks (h = 1e-5) of every parameter, one model per (kind, seed).

    Probe inputs are redrawn (deterministically) until the point is resolvable
    by finite differences: a unique argmax for the max kinds, and every
    analytic gradient entry at least ``min_grad`` in magnitude.  Round-off in
    a loss near ln 2 gives about 1e-11 absolute error at h = 1e-5, so smaller
    entries cannot meet a 1e-4 relative bound whatever their correctness.
    """
    res = SuiteResult("gradient")
    t0 = time.perf_counter()
    labels = np.arange(batch) % 2
    for kind in kinds:
        for seed in seeds:
            model = AecModel.initialize(ModelConfig(input_dim, units, 1, "uni", kind), seed)
            rng = np.random.default_rng((seed, 7))
            for _ in range(200):
                X = rng.normal(size=(batch, T, input_dim))
                if kind in MAX_KINDS and argmax_margin(model, X) < min_margin:
                    continue
                if min_abs_gradient(model, X, labels) >= min_grad:
                    break
            else:
                res.record(False, f"{kind} seed {seed}: no resolvable probe input in 200 draws")
                continue
            rep = grad_check(
                lambda p: model.loss_and_grad(X, labels),
                model.params,
                perturbation=1e-5,
                tolerance=tolerance,
                loss_fn=lambda p: model.loss(X, labels),
            )
            res.worst = max(res.worst, rep.worst)
            res.record(rep.passed, f"{kind} seed {seed}: {rep.failures} (worst {rep.worst:.3g})")
    res.seconds = time.perf_counter() - t0
    return res


# -- pooling algebra ---------------------------------------------------------


def pooling_algebra_suite(n_sequences: int = 10_000, max_len: int = 64, seed: int = 0) -> SuiteResult:
    """Range containment, constant fixed points and the sandwich inequalities.

    Inequalities allow an absolute slack of 1e-12 for rounding.
    """
    res = SuiteResult("pooling_algebra")
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    n_att = 4
    for k in range(n_sequences):
        T = int(rng.integers(1, max_len + 1))
        y = rng.uniform(0.0, 1.0, size=T)
        H = rng.normal(size=(T, n_att))
        u = rng.normal(size=n_att)
        p = {kind: pool_prediction(kind, y, head=u, H=H) for kind in (
            PoolingKind.PRED_MAX, PoolingKind.PRED_AVG, PoolingKind.PRED_LIN_SOFTMAX,
            PoolingKind.PRED_EXP_SOFTMAX, PoolingKind.PRED_ATTENTION)}
        lo, hi = y.min(), y.max()
        ok = all(lo - SLACK <= v <= hi + SLACK for v in p.values())
        avg, mx = p[PoolingKind.PRED_AVG], p[PoolingKind.PRED_MAX]
        ok &= avg <= p[PoolingKind.PRED_LIN_SOFTMAX] + SLACK and p[PoolingKind.PRED_LIN_SOFTMAX] <= mx + SLACK
        ok &= avg <= p[PoolingKind.PRED_EXP_SOFTMAX] + SLACK and p[PoolingKind.PRED_EXP_SOFTMAX] <= mx + SLACK
        c = float(y[0])
        const = np.full(T, c)
        errs = [abs(pool_prediction(kind, const, head=u, H=H) - c) for kind in p]
        row = H[0]
        errs += [float(np.max(np.abs(pool_feature(kind, np.tile(row, (T, 1)), head=(u, 0.3)) - row)))
                 for kind in (PoolingKind.FEAT_LAST_FRAME, PoolingKind.FEAT_MAX, PoolingKind.FEAT_AVG, PoolingKind.FEAT_ATTENTION)]
        worst = max(errs)
        res.worst = max(res.worst, worst)
        ok &= worst <= 1e-12
        res.record(bool(ok), f"sequence {k} (T={T})")
    res.seconds = time.perf_counter() - t0
    return res


# -- oracle equivalence ------------------------------------------------------


def _sig(a: float) -> float:
    return 1.0 / (1.0 + math.exp(-a))


def lstm_scalar_oracle(X, W, U, b) -> np.ndarray:
    """Textbook LSTM as plain Python loops; gates packed [i | f | o | g]."""
    T, d = len(X), len(X[0])
    N = len(U)
    h = [0.0] * N
    c = [0.0] * N
    out = []
    for t in range(T):
        a = [b[j] + sum(X[t][k] * W[k][j] for k in range(d)) + sum(h[k] * U[k][j] for k in range(N)) for j in range(4 * N)]
        c = [_sig(a[N + j]) * c[j] + _sig(a[j]) * math.tanh(a[3 * N + j]) for j in range(N)]
        h = [_sig(a[2 * N + j]) * math.tanh(c[j]) for j in range(N)]
        out.append(list(h))
    return np.array(out)


def lfbe_two_step_oracle(wave: Waveform, config: FrontendConfig) -> np.ndarray:
    """Per-frame DFT power by explicit loop, then mel weighting and log."""
    frames = frame_signal(wave, config.frame_ms, config.hop_ms)
    L = frames.shape[1]
    n_fft = next_pow2(L)
    window = np.array([0.5 - 0.5 * math.cos(2 * math.pi * i / L) for i in range(L)])
    bank = mel_bank(config.n_mels, wave.sample_rate, n_fft).weights
    rows = []
    for fr in frames:
        power = np.abs(np.fft.fft(np.concatenate([fr * window, np.zeros(n_fft - L)])))[: n_fft // 2 + 1] ** 2
        rows.append(np.log(np.maximum(bank @ power, config.energy_floor)))
    return np.array(rows)


def mix_slice_add_oracle(event, background, gain, start) -> np.ndarray:
    out = np.array(background, dtype=np.float64)
    out[start : start + len(event)] = out[start : start + len(event)] + gain * np.asarray(event)
    return out


def oracle_suite(n_cases: int = 5, seed: int = 0) -> SuiteResult:
    from raec.synth import ebr_gain, mix, onset_sample

    res = SuiteResult("oracle")
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    for k in range(n_cases):
        d, N, T = 3, 4, 9
        p = LstmParams(rng.normal(size=(d, 4 * N)), rng.normal(size=(N, 4 * N)) * 0.5, rng.normal(size=4 * N))
        X = rng.normal(size=(T, d))
        err = float(np.max(np.abs(lstm_forward(X, p) - lstm_scalar_oracle(X.tolist(), p.W.tolist(), p.U.tolist(), p.b.tolist()))))
        res.worst = max(res.worst, err)
        res.record(err <= 1e-12, f"lstm case {k}: {err:.3g}")

        q = LstmParams(rng.normal(size=(d, 4 * N)), rng.normal(size=(N, 4 * N)) * 0.5, rng.normal(size=4 * N))
        bi = bilstm_forward(X, p, q)
        err = float(max(np.max(np.abs(bi[:, :N] - lstm_forward(X, p))),
                        np.max(np.abs(bi[:, N:] - lstm_forward(X[::-1], q)[::-1]))))
        res.worst = max(res.worst, err)
        res.record(err <= 1e-12, f"bilstm case {k}: {err:.3g}")

        sr = 8000
        bg = Waveform(rng.normal(scale=0.1, size=sr // 2), sr)
        ev = Waveform(rng.normal(scale=0.1, size=int(rng.integers(100, 1000))), sr)
        onset = float(rng.integers(0, 2000)) / sr
        ebr = float(rng.choice([-6.0, 0.0, 6.0]))
        start = onset_sample(onset, sr)
        g = ebr_gain(ev, Waveform(bg.samples[start : start + len(ev)], sr), ebr)
        m = mix(ev, bg, ebr, onset).samples
        ok = np.array_equal(m, mix_slice_add_oracle(ev.samples, bg.samples, g, start))
        res.record(ok, f"mix case {k}")

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", AmplitudeWarning)
            w = Waveform(rng.normal(scale=0.3, size=int(rng.integers(400, 4000))), sr)
        cfg = FrontendConfig(n_mels=int(rng.choice([20, 40, 64])))
        err = float(np.max(np.abs(compute_lfbe(w, cfg).values - lfbe_two_step_oracle(w, cfg))))
        res.worst = max(res.worst, err)
        res.record(err <= 1e-6, f"lfbe case {k}: {err:.3g}")
    res.seconds = time.perf_counter() - t0
    return res


# -- synthesis fidelity ------------------------------------------------------


def synthesis_suite(n_mixtures: int = 200, seed: int = 0) -> SuiteResult:
    """EBR round trip, background preservation and manifest determinism on a toy corpus."""
    from raec.synth import gen_toy_assets, gen_training_corpus, measure_ebr, render, ToyAssetConfig

    res = SuiteResult("synthesis")
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AmplitudeWarning)
        assets = gen_toy_assets(seed, ToyAssetConfig(events_per_class=10, n_backgrounds=10))
        man = gen_training_corpus(assets, n_mixtures, "tone", seed=seed, split="train")
        again = gen_training_corpus(assets, n_mixtures, "tone", seed=seed, split="train")
        res.record(man.dumps() == again.dumps(), "manifest determinism")
        for spec in man.specs:
            out = render(spec, assets)
            bg = assets.backgrounds[spec.background_id]
            if spec.label == 0:
                res.record(np.array_equal(out.samples, bg.samples), f"{spec.id}: negative differs from background")
                continue
            n = len(assets.events[spec.event_id])
            start = round(spec.onset_s * bg.sample_rate)
            err = abs(measure_ebr(out, bg, spec.onset_s, n) - spec.ebr_db)
            res.worst = max(res.worst, err)
            outside = np.concatenate([out.samples[:start], out.samples[start + n :]])
            bg_out = np.concatenate([bg.samples[:start], bg.samples[start + n :]])
            res.record(err <= 0.1 and np.array_equal(outside, bg_out), f"{spec.id}: ebr err {err:.3g}")
    res.seconds = time.perf_counter() - t0
    return res


def run_all(quick: bool = True) -> list[SuiteResult]:
    if quick:
        return [
            gradient_suite(seeds=range(2)),
            pooling_algebra_suite(1000),
            oracle_suite(3),
            synthesis_suite(60),
        ]
    return [gradient_suite(), pooling_algebra_suite(), oracle_suite(), synthesis_suite()]

"""Acceptance criteria, each at its stated tolerance and runtime budget.

Every test prints one ``criterion N: PASS|FAIL ...`` line (inline and again in
the terminal summary).  Criteria 5-8 share one desk-scale position study;
criterion 9 repeats it from scratch and compares the report CSVs byte for byte.
Budget: roughly 20 minutes on one core.
"""

import time
import warnings

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from raec import experiments as ex
from raec import selftest
from raec.dsp import AmplitudeWarning
from raec.evalkit import export_report, sensitivity_spread
from raec.synth import measure_ebr, render

DESK = ex.DeskConfig()


def verdict(capsys, n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    with capsys.disabled():
        print(f"\n{line}")
    assert ok, line


# -- property suites ---------------------------------------------------------


def test_criterion_1_gradient_suite(capsys):
    res = selftest.gradient_suite(seeds=range(20))
    ok = res.ok and res.total == 9 * 20 and res.worst < 1e-4 and res.seconds < 120
    verdict(capsys, 1, ok, f"{res.passed}/{res.total} (kind, seed) checks, max rel err {res.worst:.2e} < 1e-4, {res.seconds:.1f} s < 120 s")


def test_criterion_2_pooling_algebra(capsys):
    res = selftest.pooling_algebra_suite(n_sequences=10_000, max_len=64)
    ok = res.ok and res.seconds < 10
    verdict(capsys, 2, ok, f"{res.total - res.passed} violations in {res.total} checks, worst fixed-point error {res.worst:.1e}, {res.seconds:.1f} s < 10 s")


def test_criterion_3_oracles(capsys):
    res = selftest.oracle_suite()
    ok = res.ok and res.seconds < 30
    verdict(capsys, 3, ok, f"{res.passed}/{res.total} oracle comparisons, {res.seconds:.1f} s < 30 s")


def desk_fidelity():
    """EBR / bit-preservation over every rendered positive of the desk corpus, plus determinism."""
    failures, worst, checked = [], 0.0, 0
    train_assets, test_assets = ex.build_assets(DESK)
    manifests = ex.build_manifests(DESK, train_assets, test_assets)
    again = ex.build_manifests(DESK, *ex.build_assets(DESK))
    identical = all(manifests[k].dumps() == again[k].dumps() for k in manifests)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AmplitudeWarning)
        for split, m in manifests.items():
            pool = train_assets if split in ("train", "dev") else test_assets
            for spec in m.specs:
                out = render(spec, pool)
                bg = pool.backgrounds[spec.background_id]
                if spec.label == 0:
                    if not np.array_equal(out.samples, bg.samples):
                        failures.append(spec.id)
                    continue
                n = len(pool.events[spec.event_id])
                start = round(spec.onset_s * bg.sample_rate)
                err = abs(measure_ebr(out, bg, spec.onset_s, n) - spec.ebr_db)
                worst = max(worst, err)
                checked += 1
                kept = np.array_equal(out.samples[:start], bg.samples[:start]) and np.array_equal(
                    out.samples[start + n :], bg.samples[start + n :]
                )
                if err > 0.1 or not kept:
                    failures.append(spec.id)
            if split == "test":
                for spec in m.specs[:20]:
                    if render(spec, pool).samples.tobytes() != render(spec, pool).samples.tobytes():
                        failures.append(f"{spec.id} render not repeatable")
    return identical, failures, worst, checked


def test_criterion_4_synthesis(capsys):
    t0 = time.perf_counter()
    suite = selftest.synthesis_suite(200)
    identical, failures, worst, checked = desk_fidelity()
    secs = time.perf_counter() - t0
    ok = suite.ok and identical and not failures and secs < 30
    verdict(
        capsys,
        4,
        ok,
        f"{checked} desk positives + {suite.total} suite checks, worst EBR error {max(worst, suite.worst):.1e} dB <= 0.1, "
        f"{len(failures) + suite.total - suite.passed} failures, manifests identical={identical}, {secs:.1f} s < 30 s",
    )


# -- desk-scale study (criteria 5-9) -----------------------------------------


def run_study():
    corpora = ex.build_corpora(DESK)
    models, results, seconds = {}, {}, {}
    for name, kind, direction in ex.STUDY_CONDITIONS:
        models[name] = DESK.model_config(pooling=kind, direction=direction)
        t0 = time.perf_counter()
        results[name] = ex.run_condition(DESK, corpora, models[name], with_grid=True)
        seconds[name] = time.perf_counter() - t0
    return ex.StudyResult(models, results), seconds


def study_csvs(study, out_dir):
    export_report(out_dir, study.all_curves(), study.rows(DESK))
    for name, res in study.results.items():
        for r in res:
            r.history.to_csv(out_dir / f"history_{name}_t{r.trial}.csv")
    return {p.name: p.read_bytes() for p in sorted(out_dir.iterdir())}


@pytest.fixture(scope="module")
def study():
    return run_study()


def test_criterion_5_desk_classification(capsys, study):
    res, secs = study
    accs = [r.test_accuracy for r in res.results["pred_max"]]
    mean = float(np.mean(accs))
    ok = len(accs) == 5 and mean >= 0.90 and secs["pred_max"] < 15 * 60
    verdict(capsys, 5, ok, f"Y.MaxPooling mean test accuracy {mean:.4f} >= 0.90 over trials {[round(a, 3) for a in accs]}, {secs['pred_max']:.0f} s < 900 s")


def test_criterion_6_memory_retaining(capsys, study):
    res, secs = study
    curves = res.curves(0.0)["last_frame"]
    gaps = [ex.early_late_gap(c, 3) for c in curves]
    med = ex.median(gaps)
    ok = len(curves) == 5 and len(curves[0].positions) == 10 and med >= 0.10 and secs["last_frame"] < 10 * 60
    verdict(capsys, 6, ok, f"LastFrame late-minus-early recall, median {med:.3f} >= 0.10 (per trial {[round(g, 3) for g in gaps]}), {secs['last_frame']:.0f} s < 600 s")


def test_criterion_7_insensitivity(capsys, study):
    res, _ = study
    curves = res.curves(0.0)
    max_range = ex.median(sensitivity_spread(c)[2] for c in curves["pred_max"])
    lf_range = ex.median(sensitivity_spread(c)[2] for c in curves["last_frame"])
    avg = curves["pred_avg"]
    latest = ex.median(c.recall[c.positions[-1]] for c in avg)
    middle = ex.median(c.recall[ex.middle_position(c)] for c in avg)
    ok = max_range <= 0.5 * lf_range and latest < middle
    verdict(
        capsys,
        7,
        ok,
        f"median range Y.Max {max_range:.3f} <= 0.5 x LastFrame {lf_range:.3f}; "
        f"Y.Avg median recall at {avg[0].positions[-1]} s {latest:.3f} < at {ex.middle_position(avg[0])} s {middle:.3f}",
    )


def test_criterion_8_bilstm_mitigation(capsys, study):
    res, _ = study
    curves = res.curves(0.0)
    uni = ex.median(ex.worst_recall(c) for c in curves["pred_avg"])
    bi = ex.median(ex.worst_recall(c) for c in curves["pred_avg_bi"])
    verdict(capsys, 8, bi >= uni, f"Y.Avg worst-position recall, median bi 16+16 {bi:.3f} >= uni 32 {uni:.3f} (gain {bi - uni:+.3f}, not gated)")


def test_criterion_9_determinism(capsys, study, tmp_path):
    first = study_csvs(study[0], tmp_path / "first")
    second = study_csvs(run_study()[0], tmp_path / "second")
    differ = sorted(k for k in first if first[k] != second.get(k))
    ok = set(first) == set(second) and not differ
    verdict(capsys, 9, ok, f"{len(first)} CSVs from criteria 5-8 rerun with identical seeds, {len(differ)} differ {differ}")

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from raec.evalkit import (
    ACCURACY_COLUMNS,
    POSITION_COLUMNS,
    SPREAD_COLUMNS,
    AccuracyRow,
    EvalError,
    PositionCurve,
    PredictionRecord,
    accuracy,
    aggregate_trials,
    classify,
    classify_batch,
    decide,
    export_report,
    read_report,
    recall_by_position,
    sensitivity_spread,
)
from raec.nn import Hyper
from raec.seqmodel import AecModel, ModelConfig
from raec.synth import ToyAssetConfig, gen_position_grid, gen_toy_assets, gen_training_corpus, grid_positions
from raec.trainer import TrainConfig, featurize, train


class ConstModel:
    def __init__(self, value, dim=64):
        self.value = value
        self.config = ModelConfig(dim, 4)

    def score(self, X, batch_size=100):
        return np.full(np.shape(X)[0], self.value)


def test_threshold_boundary():
    assert decide(0.5) == 1 and decide(0.49) == 0 and decide(0.51) == 1
    m = AecModel.initialize(ModelConfig(4, 4), 0)
    m.params["head.w"][:] = 0
    r = classify(m, np.ones((5, 4)), mixture_id="a")
    assert r.score == 0.5 and r.decision == 1 and r.correct


def test_classify_errors_and_purity():
    m = AecModel.initialize(ModelConfig(4, 4), 0)
    with pytest.raises(EvalError, match="input_dim"):
        classify(m, np.ones((5, 3)))
    with pytest.raises(EvalError):
        classify(m, np.ones((2, 5, 4)))
    x = np.random.default_rng(0).normal(size=(7, 4))
    assert classify(m, x).score == classify(m, x).score


def test_accuracy_counts():
    rec = lambda d, l: PredictionRecord("", float(d), l, d)  # noqa: E731
    assert accuracy([rec(1, 1), rec(0, 0)]) == 1.0
    assert accuracy([rec(1, 0), rec(0, 1)]) == 0.0
    assert accuracy([rec(1, 1), rec(0, 0), rec(1, 1), rec(1, 0)]) == 0.75
    with pytest.raises(EvalError):
        accuracy([])


@pytest.fixture(scope="module")
def grid_pool():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return gen_toy_assets(4, ToyAssetConfig(events_per_class=10, n_backgrounds=4, background_s=1.0))


def small_grid(pool):
    events = [e for e in pool.events_of("tone") if len(pool.events[e]) <= 1600][:2]
    return gen_position_grid(pool, events, sorted(pool.backgrounds)[:2], grid_positions(1.0, 5), (0.0, 6.0))


@pytest.mark.parametrize("value,expected", [(0.9, 1.0), (0.1, 0.0)])
def test_constant_models_recall(grid_pool, value, expected):
    m = small_grid(grid_pool)
    curves = recall_by_position(ConstModel(value), m, features=np.zeros((len(m), 3, 64)))
    assert [c.ebr_db for c in curves] == [0.0, 6.0]
    for c in curves:
        assert c.positions == grid_positions(1.0, 5)
        assert all(v == expected for v in c.values())
        assert sum(c.count.values()) == len(m) // 2


def test_recall_equals_accuracy_on_positives(grid_pool):
    m = small_grid(grid_pool)
    rng = np.random.default_rng(0)
    scores = rng.uniform(size=len(m))

    class Fixed(ConstModel):
        def score(self, X, batch_size=100):
            return scores

    curves = recall_by_position(Fixed(0), m, features=np.zeros((len(m), 1, 64)))
    total = sum(c.recall[p] * c.count[p] for c in curves for p in c.positions)
    acc = accuracy(classify_batch(Fixed(0), np.zeros((len(m), 1, 64)), [1] * len(m)))
    assert total / len(m) == pytest.approx(acc, abs=1e-15)


def test_recall_errors(grid_pool):
    m = small_grid(grid_pool)
    with pytest.raises(EvalError):
        recall_by_position(ConstModel(0.9), m)
    neg = gen_training_corpus(grid_pool, 4, "tone", seed=0)
    with pytest.raises(EvalError, match="positives only"):
        recall_by_position(ConstModel(0.9), neg, features=np.zeros((4, 1, 64)))


def test_recall_renders_when_given_assets(grid_pool):
    m = small_grid(grid_pool)
    a = recall_by_position(ConstModel(0.9), m, assets=grid_pool)
    b = recall_by_position(ConstModel(0.9), m, assets=grid_pool, cache=False)
    assert [c.values() for c in a] == [c.values() for c in b]


def test_aggregate_examples():
    one = aggregate_trials([0.8])
    assert one.mean == 0.8 and one.std is None and one.n == 1
    flat = aggregate_trials([0.9, 0.9, 0.9])
    assert flat.mean == pytest.approx(0.9, abs=1e-15) and flat.std == pytest.approx(0.0, abs=1e-15)
    five = aggregate_trials([0.88, 0.90, 0.92, 0.91, 0.89])
    assert five.mean == pytest.approx(0.90, abs=1e-12)
    assert five.std == pytest.approx(math.sqrt(0.001 / 4), abs=1e-12)
    assert five.std == pytest.approx(0.015811, abs=1e-6)
    with pytest.raises(EvalError):
        aggregate_trials([])


@settings(max_examples=100, deadline=None)
@given(vals=st.lists(st.floats(0, 1), min_size=2, max_size=8), seed=st.integers(0, 1000))
def test_aggregate_permutation_invariant(vals, seed):
    perm = np.random.default_rng(seed).permutation(len(vals))
    a, b = aggregate_trials(vals), aggregate_trials([vals[i] for i in perm])
    assert a.mean == b.mean
    assert a.std == pytest.approx(b.std, abs=1e-15)


def test_spread():
    assert sensitivity_spread(PositionCurve("x", 0.0, {0.0: 0.5, 1.0: 0.5}))[2] == 0.0
    lo, hi, rng = sensitivity_spread(PositionCurve("x", 0.0, {0.0: 0.1, 29.0: 0.9}))
    assert (lo, hi) == (0.1, 0.9) and rng == pytest.approx(0.8, abs=1e-15)
    with pytest.raises(EvalError):
        sensitivity_spread(PositionCurve("x", 0.0))


def test_export_empty_is_header_only(tmp_path):
    paths = export_report(tmp_path)
    assert paths["accuracy"].read_text() == ",".join(ACCURACY_COLUMNS) + "\n"
    assert paths["position"].read_text() == "event,pooling,ebr_db,position_s,recall,n\n"
    assert paths["spread"].read_text() == "event,pooling,ebr_db,min,max,range\n"
    assert POSITION_COLUMNS == ("event", "pooling", "ebr_db", "position_s", "recall", "n")
    assert SPREAD_COLUMNS == ("event", "pooling", "ebr_db", "min", "max", "range")
    assert ACCURACY_COLUMNS == ("event", "pooling", "layers", "train_size", "trial", "accuracy")


def test_export_round_trip_exact(tmp_path):
    curves = [
        PositionCurve("tone", 0.0, {0.0: 1 / 3, 0.3: 0.7, 0.6: 0.1 + 0.2}, {0.0: 3, 0.3: 10, 0.6: 7}, "Y.MaxPooling|uni1x32|t0"),
        PositionCurve("tone", -6.0, {0.0: 0.25}, {0.0: 4}, "LastFrame"),
    ]
    rows = [AccuracyRow("tone", "Y.MaxPooling", "uni1x32", 500, k, 0.9 + k / 997) for k in range(3)]
    export_report(tmp_path, curves, rows)
    back = read_report(tmp_path)
    assert back.accuracy == rows
    assert back.curves == curves


def test_read_report_rejects_bad_header(tmp_path):
    export_report(tmp_path)
    (tmp_path / "accuracy.csv").write_text("a,b\n")
    with pytest.raises(EvalError):
        read_report(tmp_path)


def test_unwritable_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(EvalError):
        export_report(blocker / "sub")


def test_trained_toy_model_detects_loud_positive():
    toy = ToyAssetConfig(events_per_class=20, n_backgrounds=30, background_s=1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a, b = gen_toy_assets(1, toy), gen_toy_assets(2, toy)
        tr = featurize(gen_training_corpus(a, 200, "tone", seed=5), a)
        dv = featurize(gen_training_corpus(b, 100, "tone", seed=6, split="dev"), b)
    model, _ = train(TrainConfig(ModelConfig(64, 16, 1, "uni", "Y.MaxPooling"), Hyper(batch_size=25), 30, 1), tr, dv)
    loud = [i for i, s in enumerate(dv.specs) if s.label == 1 and s.ebr_db == 6.0]
    rec = classify(model, dv.X[loud[0]], label=1)
    assert rec.decision == 1

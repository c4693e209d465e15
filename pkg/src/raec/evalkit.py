"""Utterance-level metrics, recall-vs-position curves, trial aggregation, CSV reports."""

from __future__ import annotations

import csv
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from raec.synth import CorpusManifest, event_class

THRESHOLD = 0.5
ACCURACY_COLUMNS = ("event", "pooling", "layers", "train_size", "trial", "accuracy")
POSITION_COLUMNS = ("event", "pooling", "ebr_db", "position_s", "recall", "n")
SPREAD_COLUMNS = ("event", "pooling", "ebr_db", "min", "max", "range")


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class PredictionRecord:
    mixture_id: str
    score: float
    label: int
    decision: int

    @property
    def correct(self) -> bool:
        return self.decision == self.label


def decide(score: float, threshold: float = THRESHOLD) -> int:
    # positive on the boundary
    return int(score >= threshold)


def classify(model, features, threshold: float = THRESHOLD, mixture_id: str = "", label: int = 1) -> PredictionRecord:
    """Full forward pass on one utterance ``(T, F)``."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise EvalError(f"expected (T, F) utterance features, got shape {X.shape}")
    dim = model.config.input_dim
    if X.shape[1] != dim:
        raise EvalError(f"feature dimension {X.shape[1]} does not match model input_dim {dim}")
    score = float(model.score(X[None])[0])
    return PredictionRecord(mixture_id, score, int(label), decide(score, threshold))


def classify_batch(model, X, labels, ids=None, threshold: float = THRESHOLD) -> list[PredictionRecord]:
    scores = model.score(X)
    ids = ids if ids is not None else [str(i) for i in range(len(scores))]
    return [PredictionRecord(i, float(s), int(l), decide(s, threshold)) for i, s, l in zip(ids, scores, labels)]


def accuracy(records) -> float:
    records = list(records)
    if not records:
        raise EvalError("accuracy of an empty record set is undefined")
    return sum(r.correct for r in records) / len(records)


# -- position sensitivity ----------------------------------------------------


@dataclass
class PositionCurve:
    event: str
    ebr_db: float
    recall: dict[float, float] = field(default_factory=dict)
    count: dict[float, int] = field(default_factory=dict)
    pooling: str = ""

    @property
    def positions(self) -> list[float]:
        return sorted(self.recall)

    def values(self) -> list[float]:
        return [self.recall[p] for p in self.positions]

    def mean_over(self, positions) -> float:
        return float(np.mean([self.recall[p] for p in positions]))


def curves_from_scores(specs, scores, threshold: float = THRESHOLD, pooling: str = "") -> list[PositionCurve]:
    hits: dict[tuple[str, float], dict[float, list[int]]] = {}
    for spec, s in zip(specs, scores):
        if spec.label != 1 or spec.event_id is None:
            raise EvalError(f"sensitivity split must hold positives only; {spec.id} is negative")
        cell = hits.setdefault((event_class(spec.event_id), spec.ebr_db), {})
        cell.setdefault(spec.onset_s, []).append(decide(s, threshold))
    curves = []
    for (ev, ebr), by_pos in sorted(hits.items()):
        recall = {p: sum(d) / len(d) for p, d in sorted(by_pos.items())}
        count = {p: len(d) for p, d in sorted(by_pos.items())}
        curves.append(PositionCurve(ev, ebr, recall, count, pooling))
    return curves


def recall_by_position(model, manifest: CorpusManifest, features=None, assets=None, frontend=None,
                       threshold: float = THRESHOLD, pooling: str | None = None, cache: bool = True) -> list[PositionCurve]:
    """One curve per (event class, EBR).  Only ``model.score`` is used.

    Pass precomputed ``features`` ``(B, T, F)`` in manifest order, or ``assets``
    to render them here (``cache=False`` streams them instead of holding the grid).
    """
    if not manifest.specs:
        raise EvalError("sensitivity manifest is empty")
    if features is None:
        if assets is None:
            raise EvalError("need either precomputed features or the asset pool")
        from raec.dsp import FrontendConfig
        from raec.trainer import featurize

        features = featurize(manifest, assets, frontend or FrontendConfig(), cache=cache).X
    scores = model.score(features)
    if pooling is None:
        cfg = getattr(model, "config", None)
        pooling = str(cfg.pooling) if cfg is not None else ""
    return curves_from_scores(manifest.specs, scores, threshold, pooling)


def sensitivity_spread(curve: PositionCurve) -> tuple[float, float, float]:
    vals = curve.values()
    if not vals:
        raise EvalError("cannot take the spread of an empty curve")
    lo, hi = min(vals), max(vals)
    return lo, hi, hi - lo


# -- aggregation -------------------------------------------------------------


@dataclass(frozen=True)
class TrialAggregate:
    mean: float
    std: float | None
    n: int


def aggregate_trials(values) -> TrialAggregate:
    """Mean always; sample standard deviation (n - 1) only for two or more trials."""
    vals = [float(v) for v in values]
    if not vals:
        raise EvalError("no trials to aggregate")
    mean = math.fsum(vals) / len(vals)
    std = statistics.stdev(vals) if len(vals) >= 2 else None
    return TrialAggregate(mean, std, len(vals))


# -- report files ------------------------------------------------------------


@dataclass(frozen=True)
class AccuracyRow:
    event: str
    pooling: str
    layers: str
    train_size: int
    trial: int
    accuracy: float


@dataclass
class Report:
    accuracy: list[AccuracyRow] = field(default_factory=list)
    curves: list[PositionCurve] = field(default_factory=list)


def _fmt(x: float) -> str:
    return repr(float(x))


def export_report(out_dir, curves=(), accuracy_rows=()) -> dict[str, Path]:
    """Write accuracy.csv, position.csv and spread.csv; floats use repr so they read back exactly."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise EvalError(f"cannot create report directory {out}: {exc}") from exc
    paths = {name: out / f"{name}.csv" for name in ("accuracy", "position", "spread")}
    with open(paths["accuracy"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ACCURACY_COLUMNS)
        for r in accuracy_rows:
            w.writerow([r.event, r.pooling, r.layers, r.train_size, r.trial, _fmt(r.accuracy)])
    with open(paths["position"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POSITION_COLUMNS)
        for c in curves:
            for p in c.positions:
                w.writerow([c.event, c.pooling, _fmt(c.ebr_db), _fmt(p), _fmt(c.recall[p]), c.count[p]])
    with open(paths["spread"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SPREAD_COLUMNS)
        for c in curves:
            if c.recall:
                lo, hi, rng = sensitivity_spread(c)
                w.writerow([c.event, c.pooling, _fmt(c.ebr_db), _fmt(lo), _fmt(hi), _fmt(rng)])
    return paths


def _rows(path, columns):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != columns:
            raise EvalError(f"{path}: header {header} does not match {list(columns)}")
        yield from reader


def read_report(out_dir) -> Report:
    out = Path(out_dir)
    rep = Report()
    for ev, pool, layers, size, trial, acc in _rows(out / "accuracy.csv", ACCURACY_COLUMNS):
        rep.accuracy.append(AccuracyRow(ev, pool, layers, int(size), int(trial), float(acc)))
    by_key: dict[tuple[str, str, float], PositionCurve] = {}
    for ev, pool, ebr, pos, rec, n in _rows(out / "position.csv", POSITION_COLUMNS):
        key = (ev, pool, float(ebr))
        if key not in by_key:
            by_key[key] = PositionCurve(ev, float(ebr), pooling=pool)
            rep.curves.append(by_key[key])
        by_key[key].recall[float(pos)] = float(rec)
        by_key[key].count[float(pos)] = int(n)
    return rep

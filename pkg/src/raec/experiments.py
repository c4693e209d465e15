"""Desk-scale experiment pipeline: toy assets, corpora, pooling sweep, position sensitivity.

Everything is driven by one flat :class:`DeskConfig`; the same config always
yields the same corpora, models and report rows.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from raec.dsp import AmplitudeWarning, FrontendConfig
from raec.evalkit import AccuracyRow, PositionCurve, accuracy, classify_batch, recall_by_position
from raec.nn import Hyper
from raec.pooling import PoolingKind
from raec.seqmodel import ModelConfig
from raec.synth import (
    AssetPool,
    CorpusManifest,
    ToyAssetConfig,
    fits,
    gen_position_grid,
    gen_toy_assets,
    gen_training_corpus,
    grid_positions,
    onset_sample,
)
from raec.trainer import Dataset, TrainConfig, featurize, run_trials

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DeskConfig:
    event: str = "tone"
    sample_rate: int = 8000
    clip_s: float = 3.0
    train_size: int = 500
    dev_size: int = 100
    test_size: int = 200
    ebrs: tuple[float, ...] = (-6.0, 0.0, 6.0)
    positive_ratio: float = 0.5
    train_asset_seed: int = 1
    test_asset_seed: int = 2
    corpus_seed: int = 10
    n_positions: int = 10
    grid_events: int = 10
    grid_backgrounds: int = 20
    grid_ebrs: tuple[float, ...] = (0.0,)
    units: int = 32
    n_layers: int = 1
    direction: str = "uni"
    pooling: str = "Y.MaxPooling"
    n_epochs: int = 30
    n_trials: int = 5
    seed: int = 0
    batch_size: int = 25
    learning_rate: float = 0.001

    def __post_init__(self):
        PoolingKind.parse(self.pooling)
        if self.direction not in ("uni", "bi"):
            raise ValueError(f"direction must be 'uni' or 'bi', got {self.direction!r}")
        for name in ("train_size", "dev_size", "test_size", "n_positions", "grid_events", "grid_backgrounds", "n_trials"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def to_flat(self) -> dict[str, str]:
        out = {}
        for k, v in asdict(self).items():
            out[k] = ",".join(repr(float(x)) for x in v) if isinstance(v, tuple) else str(v)
        return out

    @classmethod
    def from_flat(cls, flat: dict[str, str]) -> "DeskConfig":
        types = {f.name: f.type for f in fields(cls)}
        unknown = set(flat) - set(types)
        if unknown:
            raise KeyError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for k, v in flat.items():
            t = types[k]
            try:
                if "tuple" in t:
                    kw[k] = tuple(float(x) for x in v.split(",") if x.strip())
                elif t == "int":
                    kw[k] = int(v)
                elif t == "float":
                    kw[k] = float(v)
                else:
                    kw[k] = v
            except ValueError:
                raise ValueError(f"config key {k!r}: cannot parse {v!r}") from None
        return cls(**kw)

    def with_overrides(self, **kw) -> "DeskConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def model_config(self, pooling=None, units=None, direction=None, n_layers=None) -> ModelConfig:
        return ModelConfig(
            input_dim=FrontendConfig().n_mels,
            units=units or self.units,
            n_layers=n_layers or self.n_layers,
            direction=direction or self.direction,
            pooling=PoolingKind.parse(pooling or self.pooling),
        )

    def train_config(self, model: ModelConfig) -> TrainConfig:
        hyper = Hyper(learning_rate=self.learning_rate, batch_size=self.batch_size)
        return TrainConfig(model, hyper, self.n_epochs, self.seed, self.n_trials)

    def toy_configs(self) -> tuple[ToyAssetConfig, ToyAssetConfig]:
        train = ToyAssetConfig(sample_rate=self.sample_rate, background_s=self.clip_s)
        test = ToyAssetConfig(sample_rate=self.sample_rate, background_s=self.clip_s, events_per_class=20, n_backgrounds=30)
        return train, test


@dataclass
class Corpora:
    train: Dataset
    dev: Dataset
    test: Dataset
    grid: Dataset
    manifests: dict[str, CorpusManifest]


def layers_label(model: ModelConfig) -> str:
    if model.direction == "bi":
        return f"bi{model.n_layers}x{model.units_per_direction}+{model.units_per_direction}"
    return f"uni{model.n_layers}x{model.units}"


def build_assets(cfg: DeskConfig) -> tuple[AssetPool, AssetPool]:
    """Disjoint seeded pools: one for train/dev, one for test and the sensitivity grid."""
    tr_cfg, te_cfg = cfg.toy_configs()
    with warnings.catch_warnings():
        # colored-noise backgrounds may peak past +-1; that is allowed
        warnings.simplefilter("ignore", AmplitudeWarning)
        return gen_toy_assets(cfg.train_asset_seed, tr_cfg), gen_toy_assets(cfg.test_asset_seed, te_cfg)


def grid_event_ids(cfg: DeskConfig, assets: AssetPool, positions) -> list[str]:
    """Events that fit at every grid position, so every cell has the same population."""
    n_bg = int(round(cfg.clip_s * cfg.sample_rate))
    last = onset_sample(max(positions), cfg.sample_rate)
    ok = [e for e in assets.events_of(cfg.event) if fits(len(assets.events[e]), n_bg, last)]
    if not ok:
        raise ValueError(f"no {cfg.event!r} event is short enough for the last grid position {max(positions)} s")
    return ok[: cfg.grid_events]


def build_manifests(cfg: DeskConfig, train_assets: AssetPool, test_assets: AssetPool) -> dict[str, CorpusManifest]:
    s = cfg.corpus_seed
    common = dict(target_class=cfg.event, ebr_set=cfg.ebrs, positive_ratio=cfg.positive_ratio)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AmplitudeWarning)
        out = {
            "train": gen_training_corpus(train_assets, cfg.train_size, seed=s, split="train", **common),
            "dev": gen_training_corpus(train_assets, cfg.dev_size, seed=s + 1, split="dev", **common),
            "test": gen_training_corpus(test_assets, cfg.test_size, seed=s + 2, split="test", **common),
        }
        positions = grid_positions(cfg.clip_s, cfg.n_positions)
        events = grid_event_ids(cfg, test_assets, positions)
        backgrounds = sorted(test_assets.backgrounds)[: cfg.grid_backgrounds]
        out["sensitivity"] = gen_position_grid(test_assets, events, backgrounds, positions, cfg.grid_ebrs, seed=s + 3)
    return out


def build_corpora(cfg: DeskConfig, assets: tuple[AssetPool, AssetPool] | None = None) -> Corpora:
    train_assets, test_assets = assets or build_assets(cfg)
    manifests = build_manifests(cfg, train_assets, test_assets)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AmplitudeWarning)
        data = {
            name: featurize(m, train_assets if name in ("train", "dev") else test_assets)
            for name, m in manifests.items()
        }
    return Corpora(data["train"], data["dev"], data["test"], data["sensitivity"], manifests)


@dataclass
class TrialResult:
    trial: int
    model: object
    history: object
    test_accuracy: float
    curves: list[PositionCurve]


def run_condition(cfg: DeskConfig, corpora: Corpora, model: ModelConfig, jobs: int = 1, with_grid: bool = True) -> list[TrialResult]:
    """Train ``cfg.n_trials`` models for one condition; score test and (optionally) the grid."""
    results = run_trials(cfg.train_config(model), corpora.train, corpora.dev, jobs=jobs)
    out = []
    for k, (m, hist) in enumerate(results):
        recs = classify_batch(m, corpora.test.X, corpora.test.labels, [s.id for s in corpora.test.specs])
        curves = recall_by_position(m, corpora.manifests["sensitivity"], features=corpora.grid.X) if with_grid else []
        out.append(TrialResult(k, m, hist, accuracy(recs), curves))
        log.info("%s %s trial %d: test acc %.3f (best epoch %d)", model.pooling, layers_label(model), k, out[-1].test_accuracy, hist.best_epoch)
    return out


def accuracy_rows(cfg: DeskConfig, model: ModelConfig, results: list[TrialResult]) -> list[AccuracyRow]:
    return [AccuracyRow(cfg.event, str(model.pooling), layers_label(model), cfg.train_size, r.trial, r.test_accuracy) for r in results]


def sweep(cfg: DeskConfig, corpora: Corpora | None = None, kinds=None, jobs: int = 1, with_grid: bool = False):
    """Every pooling kind x ``n_trials``; returns ``(accuracy_rows, curves)``."""
    corpora = corpora or build_corpora(cfg)
    rows, curves = [], []
    for kind in kinds or list(PoolingKind):
        model = cfg.model_config(pooling=kind)
        res = run_condition(cfg, corpora, model, jobs=jobs, with_grid=with_grid)
        rows += accuracy_rows(cfg, model, res)
        curves += labelled_curves(model, res)
    return rows, curves


def condition_label(model: ModelConfig, trial: int) -> str:
    """Pooling column of position.csv / spread.csv: ``kind|layers|t<trial>``."""
    return f"{model.pooling}|{layers_label(model)}|t{trial}"


def parse_condition_label(label: str) -> tuple[str, str, int]:
    kind, layers, trial = label.split("|")
    return kind, layers, int(trial[1:])


def labelled_curves(model: ModelConfig, results: list[TrialResult]) -> list[PositionCurve]:
    out = []
    for r in results:
        for c in r.curves:
            c.pooling = condition_label(model, r.trial)
            out.append(c)
    return out


# conditions of the position study: (name, pooling, direction); all use cfg.units in total
STUDY_CONDITIONS = (
    ("last_frame", "LastFrame", "uni"),
    ("pred_max", "Y.MaxPooling", "uni"),
    ("pred_avg", "Y.AvgPooling", "uni"),
    ("pred_avg_bi", "Y.AvgPooling", "bi"),
)


@dataclass
class StudyResult:
    models: dict[str, ModelConfig]
    results: dict[str, list[TrialResult]]

    def rows(self, cfg: DeskConfig) -> list[AccuracyRow]:
        return [row for name, res in self.results.items() for row in accuracy_rows(cfg, self.models[name], res)]

    def curves(self, ebr_db: float = 0.0) -> dict[str, list[PositionCurve]]:
        """Per condition, the target-event curve at ``ebr_db`` for each trial."""
        out = {}
        for name, res in self.results.items():
            out[name] = [c for r in res for c in r.curves if c.ebr_db == ebr_db]
        return out

    def all_curves(self) -> list[PositionCurve]:
        return [c for name, res in self.results.items() for c in labelled_curves(self.models[name], res)]


def position_study(cfg: DeskConfig, corpora: Corpora | None = None, jobs: int = 1, conditions=STUDY_CONDITIONS) -> StudyResult:
    corpora = corpora or build_corpora(cfg)
    models, results = {}, {}
    for name, kind, direction in conditions:
        models[name] = cfg.model_config(pooling=kind, direction=direction)
        results[name] = run_condition(cfg, corpora, models[name], jobs=jobs, with_grid=True)
    return StudyResult(models, results)


# -- sensitivity summaries ---------------------------------------------------


def early_late_gap(curve: PositionCurve, k: int = 3) -> float:
    pos = curve.positions
    return curve.mean_over(pos[-k:]) - curve.mean_over(pos[:k])


def middle_position(curve: PositionCurve) -> float:
    pos = curve.positions
    return pos[len(pos) // 2]


def worst_recall(curve: PositionCurve) -> float:
    return min(curve.values())


def median(values) -> float:
    return float(np.median(np.asarray(list(values), dtype=np.float64)))

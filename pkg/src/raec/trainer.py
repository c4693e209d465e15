"""Mini-batch ADAM training with dev-loss model selection and seeded trials."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from raec.dsp import FrontendConfig, compute_lfbe
from raec.nn import AdamState, Hyper, adam_step, bce_loss
from raec.seqmodel import AecModel, ModelConfig
from raec.synth import AssetPool, CorpusManifest, MixtureSpec, render

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "train_loss", "dev_loss", "dev_acc")


class TrainingError(RuntimeError):
    pass


@dataclass
class Dataset:
    X: np.ndarray  # (B, T, F), or StreamingFeatures
    labels: np.ndarray  # (B,)
    specs: list[MixtureSpec] = field(default_factory=list)

    def __len__(self):
        return self.X.shape[0]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        specs = [self.specs[i] for i in idx] if self.specs else []
        if isinstance(self.X, StreamingFeatures):
            return Dataset(StreamingFeatures(specs, self.X.assets, self.X.frontend), self.labels[idx], specs)
        return Dataset(self.X[idx], self.labels[idx], specs)


class StreamingFeatures:
    """Array-like ``(B, T, F)`` view that renders and featurizes on every access.

    Nothing is cached, so memory stays flat for corpora that do not fit.
    Indexing with an int gives one ``(T, F)`` matrix; a slice or index array
    gives a stacked batch.
    """

    ndim = 3

    def __init__(self, specs, assets: AssetPool, frontend: FrontendConfig = FrontendConfig()):
        self.specs = list(specs)
        self.assets = assets
        self.frontend = frontend
        first = self._one(0)
        self.shape = (len(self.specs), *first.shape)

    def _one(self, i: int) -> np.ndarray:
        values = compute_lfbe(render(self.specs[i], self.assets), self.frontend).values
        if hasattr(self, "shape") and values.shape != self.shape[1:]:
            raise ValueError(f"utterance {self.specs[i].id} has feature shape {values.shape}, expected {self.shape[1:]}")
        return values

    def __len__(self):
        return len(self.specs)

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return self._one(int(idx))
        ids = range(len(self))[idx] if isinstance(idx, slice) else np.asarray(idx).ravel()
        if len(ids) == 0:
            return np.zeros((0, *self.shape[1:]))
        return np.stack([self._one(int(i)) for i in ids])

    def __array__(self, dtype=None, copy=None):
        out = self[:]
        return out if dtype is None else out.astype(dtype)


def featurize(
    manifest: CorpusManifest, assets: AssetPool, frontend: FrontendConfig = FrontendConfig(), cache: bool = True
) -> Dataset:
    """Render every mixture and stack its LFBE matrix; all clips must share one length.

    ``cache=False`` returns a dataset whose ``X`` is a :class:`StreamingFeatures`.
    """
    if not manifest.specs:
        raise ValueError(f"manifest for split {manifest.split!r} is empty")
    if not cache:
        return Dataset(StreamingFeatures(manifest.specs, assets, frontend), manifest.labels, list(manifest.specs))
    feats = [compute_lfbe(render(s, assets), frontend).values for s in manifest.specs]
    shapes = {f.shape for f in feats}
    if len(shapes) != 1:
        raise ValueError(f"utterances differ in feature shape: {sorted(shapes)}")
    return Dataset(np.stack(feats), manifest.labels, list(manifest.specs))


@dataclass
class TrainConfig:
    model: ModelConfig
    hyper: Hyper = field(default_factory=Hyper)
    n_epochs: int = 30
    seed: int = 0
    n_trials: int = 5
    dev_eval_every: int = 1

    def __post_init__(self):
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        if self.n_epochs < 1 or self.dev_eval_every < 1:
            raise ValueError("n_epochs and dev_eval_every must be >= 1")

    def with_seed(self, seed: int) -> "TrainConfig":
        return TrainConfig(self.model, self.hyper, self.n_epochs, seed, self.n_trials, self.dev_eval_every)

    # flat key-value form, used by config files and run snapshots
    def to_flat(self) -> dict[str, str]:
        out = {f"model.{k}": str(v) for k, v in self.model.to_dict().items()}
        out.update({f"hyper.{f.name}": repr(getattr(self.hyper, f.name)) for f in fields(Hyper)})
        out.update(n_epochs=str(self.n_epochs), seed=str(self.seed), n_trials=str(self.n_trials), dev_eval_every=str(self.dev_eval_every))
        return out

    @classmethod
    def from_flat(cls, flat: dict[str, str]) -> "TrainConfig":
        ints = {"input_dim", "units", "n_layers", "batch_size", "n_epochs", "seed", "n_trials", "dev_eval_every"}

        def conv(k, v):
            return int(v) if k in ints else float(v) if k not in {"direction", "pooling"} else v

        model = {k[6:]: conv(k[6:], v) for k, v in flat.items() if k.startswith("model.")}
        hyper = {k[6:]: conv(k[6:], v) for k, v in flat.items() if k.startswith("hyper.")}
        top = {k: conv(k, v) for k, v in flat.items() if "." not in k}
        unknown = set(top) - {"n_epochs", "seed", "n_trials", "dev_eval_every"}
        if unknown:
            raise KeyError(f"unknown training config keys: {sorted(unknown)}")
        return cls(ModelConfig(**model), Hyper(**hyper), **top)


@dataclass
class TrainHistory:
    epoch: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    dev_loss: list[float] = field(default_factory=list)
    dev_acc: list[float] = field(default_factory=list)
    best_index: int = -1

    @property
    def best_epoch(self) -> int:
        return self.epoch[self.best_index]

    def rows(self):
        return zip(self.epoch, self.train_loss, self.dev_loss, self.dev_acc)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_COLUMNS)
            for e, tl, dl, da in self.rows():
                w.writerow([e, repr(tl), repr(dl), repr(da)])

    @classmethod
    def from_csv(cls, path) -> "TrainHistory":
        h = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                h.epoch.append(int(row["epoch"]))
                h.train_loss.append(float(row["train_loss"]))
                h.dev_loss.append(float(row["dev_loss"]))
                h.dev_acc.append(float(row["dev_acc"]))
        h.best_index = int(np.argmin(h.dev_loss)) if h.dev_loss else -1
        return h


def evaluate(model: AecModel, data: Dataset, threshold: float = 0.5, batch_size: int = 100) -> tuple[float, float]:
    scores = model.score(data.X, batch_size)
    acc = float(np.mean((scores >= threshold) == (data.labels == 1)))
    return bce_loss(scores, data.labels), acc


def train(config: TrainConfig, train_data: Dataset, dev_data: Dataset) -> tuple[AecModel, TrainHistory]:
    """Train one model; returns the epoch with the lowest dev loss (earliest on ties)."""
    if len(train_data) == 0 or len(dev_data) == 0:
        raise ValueError("training and dev corpora must be non-empty")
    if config.hyper.batch_size > len(train_data):
        raise ValueError(f"batch_size {config.hyper.batch_size} exceeds corpus size {len(train_data)}")
    model = AecModel.initialize(config.model, config.seed)
    model.fit_normalizer(train_data.X)
    shuffle_rng = np.random.default_rng((config.seed, 1))
    state = AdamState()
    history = TrainHistory()
    best = None
    bs = config.hyper.batch_size
    n = len(train_data)
    losses: list[float] = []
    for epoch in range(config.n_epochs):
        order = shuffle_rng.permutation(n)
        for bi, start in enumerate(range(0, n, bs)):
            idx = np.sort(order[start : start + bs])
            loss, grads = model.loss_and_grad(train_data.X[idx], train_data.labels[idx])
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite training loss at epoch {epoch}, batch {bi}")
            adam_step(model.params, grads, state, config.hyper)
            losses.append(loss)
        if (epoch + 1) % config.dev_eval_every and epoch + 1 != config.n_epochs:
            continue
        dev_loss, dev_acc = evaluate(model, dev_data)
        if not math.isfinite(dev_loss):
            raise TrainingError(f"non-finite dev loss at epoch {epoch}")
        history.epoch.append(epoch)
        history.train_loss.append(float(np.mean(losses)))
        history.dev_loss.append(dev_loss)
        history.dev_acc.append(dev_acc)
        losses = []
        if best is None or dev_loss < history.dev_loss[history.best_index]:
            history.best_index = len(history.epoch) - 1
            best = model.copy()
        log.debug("epoch %d train %.4f dev %.4f acc %.3f", epoch, history.train_loss[-1], dev_loss, dev_acc)
    return best, history


def _train_trial(args):
    config, train_data, dev_data = args
    return train(config, train_data, dev_data)


def run_trials(config: TrainConfig, train_data: Dataset, dev_data: Dataset, jobs: int = 1):
    """``n_trials`` independent runs; trial ``k`` uses seed ``config.seed + k``."""
    configs = [config.with_seed(config.seed + k) for k in range(config.n_trials)]
    tasks = [(c, train_data, dev_data) for c in configs]
    results = []
    if jobs <= 1 or len(tasks) == 1:
        for k, task in enumerate(tasks):
            try:
                results.append(_train_trial(task))
            except Exception as exc:
                raise TrainingError(f"trial {k} failed: {exc}") from exc
        return results
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(_train_trial, t) for t in tasks]
        for k, fut in enumerate(futures):
            try:
                results.append(fut.result())
            except Exception as exc:
                raise TrainingError(f"trial {k} failed: {exc}") from exc
    return results


# -- flat key-value config files ---------------------------------------------


def read_flat_config(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    out = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def write_flat_config(path, values: dict[str, str]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{k} = {v}\n" for k, v in sorted(values.items())), encoding="utf-8")

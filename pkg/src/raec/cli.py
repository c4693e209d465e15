"""Command-line entry point: ``raec <subcommand> [flags]``.

Exit codes: 0 success, 1 validation error (bad flag, bad config, missing
input), 2 runtime failure.  Every subcommand writes ``resolved_config.txt``
into its output directory; feeding that file back through ``--config``
reproduces the run.
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from raec import checkpoint, experiments
from raec.dsp import AmplitudeWarning
from raec.evalkit import AccuracyRow, accuracy, classify_batch, export_report, read_report, recall_by_position
from raec.experiments import DeskConfig
from raec.pooling import PoolingKind
from raec.synth import AssetPool, CorpusManifest, render_to_dir
from raec.trainer import featurize, read_flat_config, run_trials, write_flat_config

log = logging.getLogger("raec")

SNAPSHOT = "resolved_config.txt"
SPLITS = ("train", "dev", "test", "sensitivity")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _ebr_list(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated dB values, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty EBR list")
    return vals


def _pooling(text: str) -> str:
    try:
        return PoolingKind.parse(text).value
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat 'key = value' config file")
    common.add_argument("--seed", type=int, help="base seed for trials")
    common.add_argument("--out", type=Path, default=Path("raec-out"), help="output directory (created if absent)")
    common.add_argument("--jobs", type=int, default=1, help="parallel worker processes for trials")
    common.add_argument("--event-type", dest="event", help="target event class")
    common.add_argument("--pooling", type=_pooling, action="append", help="pooling kind (repeatable for sweep)")
    common.add_argument("--ebr", type=_ebr_list, help="comma-separated EBR set in dB, e.g. -6,0,6")
    common.add_argument("--trials", type=int, help="number of trials")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="raec", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    sub.add_parser("assets", parents=[common], help="generate toy event / background pools")
    s = sub.add_parser("synth", parents=[common], help="write corpus manifests (and optionally audio)")
    s.add_argument("--assets", type=Path, help="existing asset directory with train/ and test/ pools")
    s.add_argument("--render", action="store_true", help="also write every mixture as WAV")
    t = sub.add_parser("train", parents=[common], help="train n trials on a synthesized corpus")
    t.add_argument("--corpus", type=Path, required=True, help="output directory of 'raec synth'")
    e = sub.add_parser("eval", parents=[common], help="test accuracy and position curves for checkpoints")
    e.add_argument("--corpus", type=Path, required=True)
    e.add_argument("--checkpoint", type=Path, action="append", required=True, help="model file (repeatable)")
    w = sub.add_parser("sweep", parents=[common], help="all pooling kinds x trials on the desk-scale corpus")
    w.add_argument("--positions", action="store_true", help="also score the sensitivity grid (adds the BiLSTM condition)")
    r = sub.add_parser("report", parents=[common], help="summaries and plots from report CSVs")
    r.add_argument("--input", type=Path, required=True, help="directory holding accuracy.csv / position.csv")
    st = sub.add_parser("selftest", parents=[common], help="gradient, pooling, oracle and synthesis suites")
    st.add_argument("--full", action="store_true", help="acceptance-sized suites instead of the quick ones")
    return p


# -- config resolution -------------------------------------------------------


def resolve_config(args) -> DeskConfig:
    """Defaults < config file < flags."""
    cfg = DeskConfig()
    if args.config is not None:
        flat = read_flat_config(args.config)
        # snapshot files carry run.* bookkeeping keys
        flat = {k: v for k, v in flat.items() if not k.startswith("run.")}
        cfg = DeskConfig.from_flat({**cfg.to_flat(), **flat})
    pooling = args.pooling[0] if args.pooling else None
    ebrs = args.ebr
    cfg = cfg.with_overrides(seed=args.seed, event=args.event, pooling=pooling, n_trials=args.trials,
                             ebrs=ebrs, grid_ebrs=ebrs)
    if args.jobs < 1:
        raise ValueError("--jobs must be >= 1")
    return cfg


def write_snapshot(out: Path, cfg: DeskConfig, args, **extra) -> None:
    flat = cfg.to_flat()
    flat["run.command"] = args.command
    flat["run.jobs"] = str(args.jobs)
    for k, v in extra.items():
        flat[f"run.{k}"] = str(v)
    write_flat_config(out / SNAPSHOT, flat)


# -- subcommands -------------------------------------------------------------


def cmd_assets(args, cfg: DeskConfig) -> int:
    train_assets, test_assets = experiments.build_assets(cfg)
    train_assets.save(args.out / "assets" / "train")
    test_assets.save(args.out / "assets" / "test")
    write_snapshot(args.out, cfg, args)
    print(f"wrote {len(train_assets.events)}+{len(test_assets.events)} events, "
          f"{len(train_assets.backgrounds)}+{len(test_assets.backgrounds)} backgrounds to {args.out / 'assets'}")
    return 0


def _load_pool(root: Path) -> AssetPool:
    with warnings.catch_warnings():
        # stored backgrounds may legitimately peak past +-1
        warnings.simplefilter("ignore", AmplitudeWarning)
        return AssetPool.load(root)


def _load_pools(root: Path) -> tuple[AssetPool, AssetPool]:
    for name in ("train", "test"):
        if not (root / name).is_dir():
            raise FileNotFoundError(f"asset directory {root / name} does not exist")
    return _load_pool(root / "train"), _load_pool(root / "test")


def cmd_synth(args, cfg: DeskConfig) -> int:
    if args.assets is not None:
        pools = _load_pools(args.assets)
    else:
        pools = experiments.build_assets(cfg)
        pools[0].save(args.out / "assets" / "train")
        pools[1].save(args.out / "assets" / "test")
    # relative to the corpus directory when generated here, so the corpus can be moved
    asset_root = args.assets.resolve() if args.assets is not None else Path("assets")
    manifests = experiments.build_manifests(cfg, *pools)
    for split, m in manifests.items():
        m.assets = (asset_root / ("train" if split in ("train", "dev") else "test")).as_posix()
        m.save(args.out / "manifests" / f"{split}.tsv")
        if args.render:
            pool = pools[0] if split in ("train", "dev") else pools[1]
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", AmplitudeWarning)
                render_to_dir(m, pool, args.out / "audio" / split)
        print(f"{split}: {len(m)} mixtures")
    write_snapshot(args.out, cfg, args, assets=asset_root, render=args.render)
    return 0


def _load_corpus(corpus: Path, splits=SPLITS):
    if not corpus.is_dir():
        raise FileNotFoundError(f"corpus directory not found: {corpus}")
    out = {}
    pools: dict[str, AssetPool] = {}
    for split in splits:
        m = CorpusManifest.load(corpus / "manifests" / f"{split}.tsv")
        root = Path(m.assets)
        if not root.is_absolute():
            root = corpus / root
        if str(root) not in pools:
            if not root.is_dir():
                raise FileNotFoundError(f"asset directory named by the {split} manifest not found: {root}")
            pools[str(root)] = _load_pool(root)
        out[split] = (m, pools[str(root)])
    return out


def _featurize(manifest, pool):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AmplitudeWarning)
        return featurize(manifest, pool)


def cmd_train(args, cfg: DeskConfig) -> int:
    corpus = _load_corpus(args.corpus, ("train", "dev"))
    train_data = _featurize(*corpus["train"])
    dev_data = _featurize(*corpus["dev"])
    model_cfg = cfg.model_config()
    results = run_trials(cfg.train_config(model_cfg), train_data, dev_data, jobs=args.jobs)
    args.out.mkdir(parents=True, exist_ok=True)
    for k, (model, hist) in enumerate(results):
        checkpoint.save(model, args.out / f"trial{k}.ckpt")
        hist.to_csv(args.out / f"history_trial{k}.csv")
        print(f"trial {k} (seed {cfg.seed + k}): best epoch {hist.best_epoch}, dev loss {hist.dev_loss[hist.best_index]:.4f}, "
              f"dev acc {hist.dev_acc[hist.best_index]:.3f}")
    write_snapshot(args.out, cfg, args, corpus=args.corpus.resolve())
    return 0


def cmd_eval(args, cfg: DeskConfig) -> int:
    for path in args.checkpoint:
        if not path.is_file():
            raise FileNotFoundError(f"checkpoint not found: {path}")
    corpus = _load_corpus(args.corpus, ("test", "sensitivity"))
    test = _featurize(*corpus["test"])
    grid_manifest = corpus["sensitivity"][0]
    grid = _featurize(*corpus["sensitivity"])
    train_size = len(CorpusManifest.load(args.corpus / "manifests" / "train.tsv"))
    rows, curves = [], []
    for trial, path in enumerate(args.checkpoint):
        model = checkpoint.load(path)
        acc = accuracy(classify_batch(model, test.X, test.labels, [s.id for s in test.specs]))
        rows.append(AccuracyRow(cfg.event, str(model.config.pooling), experiments.layers_label(model.config), train_size, trial, acc))
        for c in recall_by_position(model, grid_manifest, features=grid.X):
            c.pooling = experiments.condition_label(model.config, trial)
            curves.append(c)
        print(f"{path}: test accuracy {acc:.4f}")
    export_report(args.out, curves, rows)
    write_snapshot(args.out, cfg, args, corpus=args.corpus.resolve(), checkpoints=",".join(str(p.resolve()) for p in args.checkpoint))
    return 0


def cmd_sweep(args, cfg: DeskConfig) -> int:
    kinds = [PoolingKind.parse(k) for k in args.pooling] if args.pooling else list(PoolingKind)
    conditions = [(k.value, k.value, cfg.direction) for k in kinds]
    if args.positions:
        names = {(kind, d) for _, kind, d in conditions}
        conditions += [c for c in experiments.STUDY_CONDITIONS if (c[1], c[2]) not in names]
    corpora = experiments.build_corpora(cfg)
    rows, curves = [], []
    for name, kind, direction in conditions:
        model_cfg = cfg.model_config(pooling=kind, direction=direction)
        res = experiments.run_condition(cfg, corpora, model_cfg, jobs=args.jobs, with_grid=args.positions)
        rows += experiments.accuracy_rows(cfg, model_cfg, res)
        curves += experiments.labelled_curves(model_cfg, res)
        accs = [r.test_accuracy for r in res]
        print(f"{kind:<14} {experiments.layers_label(model_cfg):<12} mean test accuracy {np.mean(accs):.4f} over {len(accs)} trials")
    export_report(args.out, curves, rows)
    write_snapshot(args.out, cfg, args, kinds=",".join(k.value for k in kinds), positions=args.positions)
    return 0


def cmd_report(args, cfg: DeskConfig) -> int:
    from raec.report import write_plots, write_summary

    for name in ("accuracy.csv", "position.csv", "spread.csv"):
        if not (args.input / name).is_file():
            raise FileNotFoundError(f"report input not found: {args.input / name}")
    rep = read_report(args.input)
    args.out.mkdir(parents=True, exist_ok=True)
    export_report(args.out, rep.curves, rep.accuracy)
    write_summary(rep, args.out / "summary.csv")
    for path in write_plots(rep, args.out):
        print(f"wrote {path}")
    write_snapshot(args.out, cfg, args, input=args.input.resolve())
    return 0


def cmd_selftest(args, cfg: DeskConfig) -> int:
    from raec import selftest

    results = selftest.run_all(quick=not args.full)
    for r in results:
        print(r.line())
        for f in r.failures[:5]:
            print(f"  failed: {f}")
    args.out.mkdir(parents=True, exist_ok=True)
    write_snapshot(args.out, cfg, args, full=args.full)
    return 0 if all(r.ok for r in results) else 2


COMMANDS = {
    "assets": cmd_assets,
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "report": cmd_report,
    "selftest": cmd_selftest,
}

# errors attributable to the caller's input rather than to the run itself
VALIDATION_ERRORS = (ValueError, KeyError, FileNotFoundError, NotADirectoryError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, cfg)
    except VALIDATION_ERRORS as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"raec {args.command}: error: {msg}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.debug("run failed", exc_info=True)
        print(f"raec {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2

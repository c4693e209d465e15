"""Summary table and plots from report CSVs (the ``report`` subcommand)."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import numpy as np

from raec.evalkit import Report, aggregate_trials

SUMMARY_COLUMNS = ("event", "pooling", "layers", "train_size", "n", "mean", "std")


def summarize(rep: Report):
    groups = defaultdict(list)
    for r in rep.accuracy:
        groups[(r.event, r.pooling, r.layers, r.train_size)].append(r.accuracy)
    return [(key, aggregate_trials(vals)) for key, vals in groups.items()]


def write_summary(rep: Report, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for (ev, pool, layers, size), agg in summarize(rep):
            w.writerow([ev, pool, layers, size, agg.n, repr(agg.mean), "" if agg.std is None else repr(agg.std)])
    return path


def _condition(label: str) -> str:
    # "kind|layers|t<k>" -> "kind|layers"; plain labels pass through
    parts = label.split("|")
    return "|".join(parts[:2]) if len(parts) == 3 else label


def write_plots(rep: Report, out_dir) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    written = []
    summary = summarize(rep)
    if summary:
        fig, ax = plt.subplots(figsize=(max(6, 0.8 * len(summary)), 4))
        labels = [f"{pool}\n{layers}" for (_, pool, layers, _), _ in summary]
        means = [agg.mean for _, agg in summary]
        errs = [agg.std or 0.0 for _, agg in summary]
        ax.bar(range(len(summary)), means, yerr=errs, capsize=3, color="0.6")
        ax.set_xticks(range(len(summary)), labels, rotation=60, ha="right", fontsize=7)
        ax.set_ylabel("test accuracy")
        ax.set_ylim(0.0, 1.0)
        fig.tight_layout()
        path = out_dir / "accuracy.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    by_cond = defaultdict(list)
    for c in rep.curves:
        by_cond[(c.event, c.ebr_db, _condition(c.pooling))].append(c)
    for ev, ebr in sorted({(k[0], k[1]) for k in by_cond}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for (e, b, cond), curves in sorted(by_cond.items()):
            if (e, b) != (ev, ebr):
                continue
            pos = curves[0].positions
            med = np.median([[c.recall[p] for p in pos] for c in curves], axis=0)
            ax.plot(pos, med, marker="o", label=cond)
        ax.set_xlabel("event onset (s)")
        ax.set_ylabel("recall (median over trials)")
        ax.set_ylim(0.0, 1.05)
        ax.set_title(f"{ev}, EBR {ebr:g} dB")
        ax.legend(fontsize=7)
        fig.tight_layout()
        path = out_dir / f"position_{ev}_{ebr:g}dB.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written

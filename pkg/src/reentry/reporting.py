"""Delimited report output and the matplotlib figures rendered next to it."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from reentry.evaluation import MetricReport, PatternBreakdown
from reentry.labeling import PatternStats

METRIC_COLUMNS = ("auc", "acc", "pre", "rec", "f1", "n_instances", "threshold")


def _fmt(value: float) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "nan"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def stats_tsv(stats: PatternStats) -> str:
    """Pattern table: pattern, instance count, re-entry rate."""
    lines = ["pattern\tcount\treentry_rate"]
    for pattern, count, rate in stats.rows():
        lines.append(f"{pattern}\t{count}\t{rate:.4f}")
    return "\n".join(lines) + "\n"


def metrics_tsv(report: MetricReport) -> str:
    header = "\t".join(METRIC_COLUMNS)
    row = "\t".join(_fmt(getattr(report, c)) for c in METRIC_COLUMNS)
    return f"{header}\n{row}\n"


def breakdown_tsv(breakdown: PatternBreakdown) -> str:
    lines = ["pattern\t" + "\t".join(METRIC_COLUMNS)]
    for pattern, report in breakdown.rows():
        row = "\t".join(_fmt(getattr(report, c)) for c in METRIC_COLUMNS)
        lines.append(f"{pattern}\t{row}")
    return "\n".join(lines) + "\n"


def pattern_stats_figure(stats: PatternStats, path: str | Path,
                         max_patterns: int = 12) -> None:
    """Bar chart of pattern frequencies with the re-entry rate overlaid
    on a second axis."""
    rows = stats.rows()[:max_patterns]
    patterns = [r[0] for r in rows]
    counts = [r[1] for r in rows]
    rates = [r[2] for r in rows]
    fig, ax_count = plt.subplots(figsize=(max(6, 0.7 * len(rows)), 4))
    ax_count.bar(patterns, counts, color="#4878a8", label="instances")
    ax_count.set_xlabel("thread pattern")
    ax_count.set_ylabel("instances")
    ax_rate = ax_count.twinx()
    ax_rate.plot(patterns, rates, "o-", color="#c44e52", label="re-entry rate")
    ax_rate.set_ylabel("re-entry rate")
    ax_rate.set_ylim(0, 1)
    fig.suptitle("Thread patterns: frequency and re-entry rate")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def pattern_f1_figure(breakdown: PatternBreakdown, path: str | Path) -> None:
    """F1 per thread-pattern group."""
    rows = breakdown.rows()
    patterns = [p for p, _ in rows]
    f1s = [r.f1 for _, r in rows]
    counts = [r.n_instances for _, r in rows]
    fig, ax = plt.subplots(figsize=(max(6, 0.7 * len(rows)), 4))
    bars = ax.bar(patterns, f1s, color="#4878a8")
    for bar, count in zip(bars, counts):
        ax.annotate(f"n={count}", (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                    ha="center", va="bottom", fontsize=8)
    ax.set_xlabel("thread pattern")
    ax.set_ylabel("F1")
    ax.set_ylim(0, 1.05)
    ax.set_title("Main-task F1 by thread pattern")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def training_curves_figure(log: list[dict], path: str | Path) -> None:
    """Validation F1 and per-task training loss across epochs."""
    epochs = [entry["epoch"] for entry in log]
    f1 = [entry["valid"]["f1"] for entry in log]
    fig, (ax_f1, ax_loss) = plt.subplots(1, 2, figsize=(10, 4))
    ax_f1.plot(epochs, f1, "o-", color="#4878a8")
    ax_f1.set_xlabel("epoch")
    ax_f1.set_ylabel("validation F1")
    ax_f1.set_ylim(0, 1.05)
    ax_f1.set_title("Convergence")
    loss_names = sorted(log[0]["train_loss"]) if log else []
    for name in loss_names:
        ax_loss.plot(epochs, [entry["train_loss"][name] for entry in log],
                     "o-", markersize=3, label=name)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train loss / instance")
    ax_loss.legend(fontsize=8)
    ax_loss.set_title("Training losses")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)

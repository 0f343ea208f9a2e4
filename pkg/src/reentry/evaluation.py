"""Classification metrics and per-thread-pattern breakdowns."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from reentry.labeling import thread_pattern


@dataclass
class MetricReport:
    """AUC plus threshold metrics over one instance set.

    ``auc`` is NaN when only one class is present.  Zero-denominator
    conventions: precision is 0 with no positive predictions, recall is 0
    with no positive labels, F1 is 0 when precision + recall is 0.
    """

    auc: float
    acc: float
    pre: float
    rec: float
    f1: float
    n_instances: int
    threshold: float

    def as_dict(self) -> dict:
        return {"auc": self.auc, "acc": self.acc, "pre": self.pre, "rec": self.rec,
                "f1": self.f1, "n_instances": self.n_instances,
                "threshold": self.threshold}


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Probability that a random positive outranks a random negative,
    counting ties as half (average-rank formulation)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1 or len(scores) == 0:
        raise ValueError("scores and labels must be equal-length 1-D sequences")
    if not set(np.unique(labels)) <= {0, 1}:
        raise ValueError("labels must be 0/1")
    positive = labels == 1
    n_pos = int(positive.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative label")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0  # 1-based average rank
        i = j + 1
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def classify_metrics(scores: Sequence[float], labels: Sequence[int],
                     threshold: float = 0.5) -> MetricReport:
    """Confusion-matrix metrics at the threshold (score >= threshold is
    a positive prediction), plus AUC when both classes are present."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if len(scores) == 0:
        raise ValueError("cannot compute metrics on an empty set")
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must align")
    preds = scores >= threshold
    actual = labels == 1
    tp = int((preds & actual).sum())
    fp = int((preds & ~actual).sum())
    fn = int((~preds & actual).sum())
    tn = int((~preds & ~actual).sum())
    pre = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * pre * rec / (pre + rec) if pre + rec else 0.0
    try:
        area = auc(scores, labels)
    except ValueError:
        area = math.nan
    return MetricReport(auc=area, acc=(tp + tn) / len(labels), pre=pre, rec=rec,
                        f1=f1, n_instances=len(labels), threshold=threshold)


@dataclass
class PatternBreakdown:
    """Per-pattern metric reports; groups partition the evaluated instances."""

    reports: dict[str, MetricReport]

    OTHER = "other"

    def rows(self) -> list[tuple[str, MetricReport]]:
        """Sorted by group size descending, then pattern; 'other' last."""
        return sorted(self.reports.items(),
                      key=lambda kv: (kv[0] == self.OTHER, -kv[1].n_instances, kv[0]))


def _pattern_of(instance) -> str:
    pattern = getattr(instance, "pattern", None)
    return pattern if pattern is not None else thread_pattern(instance.context)


def pattern_breakdown(instances: Sequence, scores: Sequence[float],
                      threshold: float = 0.5, min_count: int = 5) -> PatternBreakdown:
    """Group instances by thread pattern and score each group separately.

    Patterns with fewer than ``min_count`` instances are merged into an
    "other" group so every instance is covered exactly once.
    """
    if len(instances) != len(scores):
        raise ValueError("scores must align with instances")
    groups: dict[str, list[int]] = {}
    for idx, ins in enumerate(instances):
        groups.setdefault(_pattern_of(ins), []).append(idx)
    merged: dict[str, list[int]] = {}
    for pattern, idxs in groups.items():
        key = pattern if len(idxs) >= min_count else PatternBreakdown.OTHER
        merged.setdefault(key, []).extend(idxs)
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray([ins.label_reentry for ins in instances])
    reports = {}
    for pattern, idxs in merged.items():
        idxs = sorted(idxs)
        reports[pattern] = classify_metrics(scores[idxs], labels[idxs], threshold)
    return PatternBreakdown(reports=reports)

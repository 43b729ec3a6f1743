"""Confusion-matrix metrics and cross-fold aggregation.

Precision/recall/F anchor on a designated positive class (default: the
anomaly, class 2). Zero-denominator metrics are defined as 0 so degenerate
folds aggregate cleanly, and fold summaries use the population standard
deviation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

METRIC_NAMES = ("accuracy", "precision", "recall", "f_score")


@dataclass(frozen=True)
class ConfusionMatrix:
    """Row = true class, column = predicted class, both 1-based."""

    counts: np.ndarray  # (M, M) nonnegative ints
    positive_class: int = 2

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        object.__setattr__(self, "counts", counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError(f"confusion matrix must be square, got shape {counts.shape}")
        if counts.min() < 0:
            raise ValueError("confusion counts must be nonnegative")
        if not 1 <= self.positive_class <= counts.shape[0]:
            raise ValueError(
                f"positive class {self.positive_class} outside [1, {counts.shape[0]}]"
            )

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f_score: float

    def values(self) -> tuple[float, float, float, float]:
        return (self.accuracy, self.precision, self.recall, self.f_score)


@dataclass(frozen=True)
class MetricsSummary:
    """Cross-fold aggregate: per-metric mean and population std plus the folds."""

    mean: MetricsReport
    std: MetricsReport
    folds: tuple[MetricsReport, ...]


def confusion(predictions: Sequence[int], truths: Sequence[int], num_classes: int,
              positive_class: int = 2) -> ConfusionMatrix:
    predictions = np.asarray(predictions, dtype=np.int64)
    truths = np.asarray(truths, dtype=np.int64)
    if predictions.shape != truths.shape or predictions.ndim != 1:
        raise ValueError(
            f"predictions {predictions.shape} and truths {truths.shape} must be equal-length vectors"
        )
    if predictions.size == 0:
        raise ValueError("metrics are undefined on empty inputs")
    for name, arr in (("prediction", predictions), ("truth", truths)):
        if arr.min() < 1 or arr.max() > num_classes:
            raise ValueError(f"{name} labels fall outside [1, {num_classes}]")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (truths - 1, predictions - 1), 1)
    return ConfusionMatrix(counts, positive_class)


def f_score(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall; 0 when both are 0."""
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    if cm.total == 0:
        raise ValueError("metrics are undefined on an empty confusion matrix")
    pos = cm.positive_class - 1
    tp = float(cm.counts[pos, pos])
    fp = float(cm.counts[:, pos].sum() - cm.counts[pos, pos])
    fn = float(cm.counts[pos, :].sum() - cm.counts[pos, pos])
    accuracy = float(np.trace(cm.counts)) / cm.total
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    return MetricsReport(accuracy, precision, recall, f_score(precision, recall))


def summarize_folds(per_fold: Sequence[MetricsReport]) -> MetricsSummary:
    if not per_fold:
        raise ValueError("cannot summarize zero folds")
    table = np.array([r.values() for r in per_fold])
    mean = table.mean(axis=0)
    std = table.std(axis=0)  # population std
    return MetricsSummary(
        mean=MetricsReport(*map(float, mean)),
        std=MetricsReport(*map(float, std)),
        folds=tuple(per_fold),
    )


def write_fold_csv(rows: Sequence[tuple[str, int, MetricsReport]], fh) -> None:
    """Per-fold metric rows: model,fold,accuracy,precision,recall,f_score."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(("model", "fold") + METRIC_NAMES)
    for model, fold, report in rows:
        writer.writerow([model, fold] + [repr(v) for v in report.values()])


def render_summary_table(summaries: Sequence[tuple[str, MetricsSummary]]) -> str:
    """Aligned text table, mean with '(std)' suffix per metric."""
    headers = ["Methods", "Accuracy", "Precision", "Recall", "F-score"]
    rows = [headers]
    for name, summary in summaries:
        cells = [name]
        for mean, std in zip(summary.mean.values(), summary.std.values()):
            cells.append(f"{mean:.3f} ({std:.3f})")
        rows.append(cells)
    widths = [max(len(row[i]) for row in rows) for i in range(len(headers))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * width for width in widths))
    return "\n".join(lines) + "\n"

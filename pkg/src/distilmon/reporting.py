"""Figure rendering for experiment reports.

Figures are written to files next to the CSV outputs; nothing here opens a
display, so the Agg backend is forced before pyplot loads.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .evaluation import METRIC_NAMES, MetricsSummary
from .orchestrator import TrainingLog

ROLE_LABELS = {
    "teacher": "Teacher network",
    "baseline": "Student network without KD",
    "student_kd": "Student network with KD",
    "data_rich": "Data-rich network",
}


def save_metric_comparison(
    summaries: Sequence[tuple[str, MetricsSummary]], title: str, path: Path
) -> None:
    """Grouped bar chart of the four metrics, error bars = cross-fold std."""
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    positions = np.arange(len(METRIC_NAMES))
    width = 0.8 / max(len(summaries), 1)
    for i, (role, summary) in enumerate(summaries):
        ax.bar(
            positions + i * width,
            summary.mean.values(),
            width,
            yerr=summary.std.values(),
            capsize=3,
            label=ROLE_LABELS.get(role, role),
        )
    ax.set_xticks(positions + width * (len(summaries) - 1) / 2)
    ax.set_xticklabels(["Accuracy", "Precision", "Recall", "F-score"])
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("score")
    ax.set_title(title)
    ax.legend(fontsize=8, loc="lower right")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_training_curves(
    logs: Sequence[tuple[str, Sequence[TrainingLog]]], title: str, path: Path
) -> None:
    """Held-out accuracy and training loss per epoch, averaged over folds."""
    fig, (ax_acc, ax_loss) = plt.subplots(1, 2, figsize=(9.0, 3.6))
    for role, fold_logs in logs:
        fold_logs = [log for log in fold_logs if log.entries]
        if not fold_logs:
            continue
        epochs = [e.epoch for e in fold_logs[0].entries]
        losses = np.mean([[e.loss for e in log.entries] for log in fold_logs], axis=0)
        label = ROLE_LABELS.get(role, role)
        ax_loss.plot(epochs, losses, label=label)
        accs = [
            [e.test_acc for e in log.entries]
            for log in fold_logs
            if all(e.test_acc is not None for e in log.entries)
        ]
        if accs:
            ax_acc.plot(epochs, np.mean(accs, axis=0), label=label)
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("test accuracy")
    ax_acc.grid(alpha=0.3)
    ax_acc.legend(fontsize=8)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("training loss")
    ax_loss.grid(alpha=0.3)
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)

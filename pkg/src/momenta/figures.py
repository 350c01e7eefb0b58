"""Matplotlib figures written next to the text reports."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import MetricsReport  # noqa: E402

# no timestamps or version strings, so reruns write identical files
_PNG_METADATA = {"Software": None}

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.dpi": 100,
}


def _save(fig, path: Union[str, Path]) -> Path:
    path = Path(path)
    fig.savefig(path, format="png", metadata=_PNG_METADATA, bbox_inches="tight")
    plt.close(fig)
    return path


def confusion_figure(report: MetricsReport, path: Union[str, Path]) -> Path:
    cm = np.asarray(report.confusion)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(1.2 + 0.8 * len(cm), 1.0 + 0.8 * len(cm)))
        ax.imshow(cm, cmap="Blues")
        ax.set_xticks(range(len(cm)), report.class_names, rotation=30, ha="right")
        ax.set_yticks(range(len(cm)), report.class_names)
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        high = cm.max() if cm.size else 0
        for (i, j), v in np.ndenumerate(cm):
            ax.text(j, i, str(v), ha="center", va="center", color="white" if v > high / 2 else "black")
        ax.set_title(f"{report.task}: acc {report.accuracy:.2f}, F1 {report.macro_f1:.2f}, MMAE {report.mmae:.4f}")
        return _save(fig, path)


def history_figure(history: Sequence[dict], path: Union[str, Path]) -> Path:
    epochs = [h["epoch"] for h in history]
    with plt.rc_context(STYLE):
        fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(7, 2.6))
        ax_loss.plot(epochs, [h["train_loss"] for h in history], color="C0")
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("train loss")
        ax_loss.set_yscale("log")
        ax_acc.plot(epochs, [h["train_accuracy"] for h in history], label="train", color="C0")
        if history and "val_accuracy" in history[0]:
            ax_acc.plot(epochs, [h["val_accuracy"] for h in history], label="validation", color="C1")
        ax_acc.set_xlabel("epoch")
        ax_acc.set_ylabel("harm accuracy (%)")
        ax_acc.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def transfer_figure(table: dict, path: Union[str, Path]) -> Path:
    """Heatmaps of macro-F1, one panel per task; ``table`` is ``TransferTable.to_dict()``."""
    rows, cols, tasks = table["rows"], table["columns"], table["tasks"]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(tasks), figsize=(3.0 * len(tasks), 0.6 * len(rows) + 1.6), squeeze=False)
        for ax, task in zip(axes[0], tasks):
            grid = np.array([[table["macro_f1"][r][c][task] for c in cols] for r in rows])
            ax.imshow(grid, cmap="viridis", vmin=0, vmax=100)
            ax.set_xticks(range(len(cols)), cols, rotation=30, ha="right")
            ax.set_yticks(range(len(rows)), rows)
            for (i, j), v in np.ndenumerate(grid):
                ax.text(j, i, f"{v:.1f}", ha="center", va="center", color="white" if v < 50 else "black")
            ax.set_title(task)
        axes[0][0].set_ylabel("trained on")
        fig.tight_layout()
        return _save(fig, path)

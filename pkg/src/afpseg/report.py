"""Delimited and graphical renderings of evaluation and training results.

The CSV mirrors the text table (prediction rows, ground-truth columns,
marginal sums); the figures are rendered headlessly with matplotlib's Agg
backend so report generation works in batch jobs and containers.
"""

from __future__ import annotations

import csv
import os

import numpy as np

from .pipeline import EvalReport
from .raster import CLASS_NAMES, NUM_CLASSES

__all__ = [
    "write_confusion_csv",
    "save_confusion_figure",
    "save_training_curves",
]


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def write_confusion_csv(report: EvalReport, path: str | os.PathLike) -> str:
    """Two-decimal percentage table as CSV, marginals included."""
    pct = report.percent
    names = [name.capitalize() for name in CLASS_NAMES]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["prediction \\ ground truth", *names, "Sum"])
        for i, name in enumerate(names):
            writer.writerow(
                [name, *(f"{pct[i, j]:.2f}" for j in range(NUM_CLASSES)), f"{pct[i].sum():.2f}"]
            )
        writer.writerow(
            ["Sum", *(f"{pct[:, j].sum():.2f}" for j in range(NUM_CLASSES)), f"{pct.sum():.2f}"]
        )
    return os.fspath(path)


def save_confusion_figure(report: EvalReport, path: str | os.PathLike) -> str:
    """Annotated heatmap of the confusion percentages."""
    plt = _pyplot()
    pct = report.percent
    names = [name.capitalize() for name in CLASS_NAMES]
    fig, ax = plt.subplots(figsize=(5.2, 4.4))
    image = ax.imshow(pct, cmap="viridis", vmin=0.0)
    for i in range(NUM_CLASSES):
        for j in range(NUM_CLASSES):
            luminous = pct[i, j] > 0.5 * max(pct.max(), 1e-9)
            ax.text(
                j, i, f"{pct[i, j]:.2f}",
                ha="center", va="center", fontsize=9,
                color="black" if luminous else "white",
            )
    ax.set_xticks(range(NUM_CLASSES), names)
    ax.set_yticks(range(NUM_CLASSES), names)
    ax.set_xlabel("Ground truth")
    ax.set_ylabel("Prediction")
    ax.set_title(f"Pixel confusion (% of total) — accuracy {report.accuracy:.2f}%")
    fig.colorbar(image, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return os.fspath(path)


def save_training_curves(
    history: list,
    path: str | os.PathLike,
    pre_val_accuracy: float | None = None,
) -> str:
    """Train-loss and validation-accuracy curves from metrics rows.

    ``history`` holds per-epoch dicts with keys ``epoch``, ``train_loss``
    and ``val_accuracy`` (the metrics-log schema).  The optional
    pre-training accuracy is drawn as the epoch-0 point.
    """
    plt = _pyplot()
    epochs = [row["epoch"] for row in history]
    losses = [row["train_loss"] for row in history]
    accs = [row["val_accuracy"] * 100.0 for row in history]
    acc_epochs = list(epochs)
    if pre_val_accuracy is not None:
        acc_epochs = [0, *acc_epochs]
        accs = [pre_val_accuracy * 100.0, *accs]

    fig, ax_loss = plt.subplots(figsize=(6.4, 4.2))
    ax_loss.plot(epochs, losses, "o-", color="tab:red", label="train loss")
    ax_loss.set_xlabel("Epoch")
    ax_loss.set_ylabel("Mean train loss", color="tab:red")
    ax_loss.tick_params(axis="y", labelcolor="tab:red")
    ax_loss.set_ylim(bottom=0.0)

    ax_acc = ax_loss.twinx()
    ax_acc.plot(acc_epochs, accs, "s-", color="tab:blue", label="val accuracy")
    ax_acc.set_ylabel("Validation pixel accuracy (%)", color="tab:blue")
    ax_acc.tick_params(axis="y", labelcolor="tab:blue")
    ax_acc.set_ylim(0.0, 100.0)

    ax_loss.set_title("Training progress")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return os.fspath(path)

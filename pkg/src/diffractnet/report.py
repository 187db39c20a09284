"""Metric tables and figures written next to a run's outputs."""

from __future__ import annotations

import csv
import io
import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402

import numpy as np  # noqa: E402

CSV_HEADER = ("epoch", "train_loss", "train_acc", "test_acc", "seconds")


def _fmt(value: float, spec: str) -> str:
    return "nan" if math.isnan(value) else format(value, spec)


def metrics_row(m, timing: bool = True) -> list[str]:
    return [
        str(m.epoch),
        _fmt(m.train_loss, ".8f"),
        _fmt(m.train_acc, ".4f"),
        _fmt(m.test_acc, ".4f"),
        format(m.seconds, ".3f") if timing else "",
    ]


def metrics_csv(history, timing: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for m in history:
        writer.writerow(metrics_row(m, timing))
    return buf.getvalue()


def plot_learning_curves(history, path, title: str | None = None) -> None:
    epochs = [m.epoch for m in history]
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_loss.plot(epochs, [m.train_loss for m in history], "o-", color="C0")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("training loss")
    ax_acc.plot(epochs, [m.train_acc for m in history], "o-", label="train", color="C0")
    test = [m.test_acc for m in history]
    if not all(math.isnan(v) for v in test):
        ax_acc.plot(epochs, test, "s-", label="test", color="C3")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.set_ylim(0, 1)
    ax_acc.legend(frameon=False)
    for ax in (ax_loss, ax_acc):
        ax.xaxis.set_major_locator(MaxNLocator(integer=True))
        ax.spines["top"].set_visible(False)
        ax.spines["right"].set_visible(False)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_channel_curves(curves: dict, path, ylabel: str = "test accuracy") -> None:
    """One line per label; ``curves`` maps label -> sequence of per-epoch values."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, values in curves.items():
        ax.plot(np.arange(1, len(values) + 1), values, "o-", label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel(ylabel)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_maps(channels, merged, regions, wavelengths, path, predicted: int | None = None) -> None:
    """Per-channel output maps, the merged map, and the detector squares."""
    panels = list(channels) + [merged]
    titles = [f"λ = {w:g}" for w in wavelengths] + ["merged"]
    fig, axes = plt.subplots(1, len(panels), figsize=(2.6 * len(panels), 2.8), squeeze=False)
    for ax, img, title in zip(axes[0], panels, titles):
        ax.imshow(img, cmap="inferno", interpolation="nearest")
        ax.set_title(title, fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
    for c, (y0, y1, x0, x1) in enumerate(regions):
        color = "cyan" if c == predicted else "white"
        axes[0][-1].add_patch(
            Rectangle((x0 - 0.5, y0 - 0.5), x1 - x0, y1 - y0, fill=False, lw=0.8, ec=color)
        )
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)

"""Multi-seed comparison of channel counts on one dataset."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from diffractnet.data import Dataset
from diffractnet.network import MFDNet, MFDNetConfig, pick_frequencies
from diffractnet.training import EpochMetrics, TrainConfig, fit

log = logging.getLogger("diffractnet")

FASHION_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}
EMNIST_BALANCED_FILES = {k: f"emnist-balanced-{v.replace('t10k', 'test')}" for k, v in FASHION_FILES.items()}


def find_idx_files(root, names: dict) -> dict | None:
    """Resolve IDX file names under ``root``, accepting a ``.gz`` suffix; None if any is missing."""
    root = Path(root)
    found = {}
    for key, name in names.items():
        for candidate in (root / name, root / f"{name}.gz"):
            if candidate.is_file():
                found[key] = candidate
                break
        else:
            return None
    return found


@dataclass
class ComparisonResult:
    # histories[channels][seed] -> per-epoch metrics
    histories: dict[int, dict[int, list[EpochMetrics]]]
    seconds: float

    def final_test_acc(self, channels: int) -> list[float]:
        return [h[-1].test_acc for h in self.histories[channels].values()]

    def mean_test_acc(self, channels: int) -> float:
        return float(np.mean(self.final_test_acc(channels)))


def compare_channels(
    train: Dataset,
    test: Dataset,
    net_config: MFDNetConfig,
    train_config: TrainConfig,
    channel_counts=(1, 3),
    seeds=(0, 1, 2),
    lambda_range: tuple[float, float] = (0.8, 1.2),
    out_dir=None,
) -> ComparisonResult:
    """Train one network per (channel count, seed) pair and collect learning curves.

    With ``out_dir`` set, writes ``compare.csv`` (one row per epoch and run)
    and ``channel_curves.png`` (mean test accuracy per channel count).
    """
    start = time.perf_counter()
    histories: dict[int, dict[int, list[EpochMetrics]]] = {}
    for f in channel_counts:
        cfg = replace(net_config, wavelengths=tuple(pick_frequencies(*lambda_range, f)))
        histories[f] = {}
        for seed in seeds:
            net = MFDNet.create(cfg, seed)
            histories[f][seed] = fit(net, train, replace(train_config, seed=seed), test)
            log.info("F=%d seed=%d test_acc=%.4f", f, seed, histories[f][seed][-1].test_acc)
    result = ComparisonResult(histories, time.perf_counter() - start)
    if out_dir is not None:
        write_comparison(result, out_dir)
    return result


def write_comparison(result: ComparisonResult, out_dir) -> None:
    from diffractnet.report import plot_channel_curves

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "compare.csv", "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["channels", "seed", "epoch", "train_loss", "train_acc", "test_acc"])
        for f, runs in result.histories.items():
            for seed, history in runs.items():
                for m in history:
                    writer.writerow([f, seed, m.epoch, f"{m.train_loss:.8f}", f"{m.train_acc:.4f}", f"{m.test_acc:.4f}"])
    curves = {
        f"F = {f}": np.mean([[m.test_acc for m in h] for h in runs.values()], axis=0)
        for f, runs in result.histories.items()
    }
    plot_channel_curves(curves, out / "channel_curves.png")

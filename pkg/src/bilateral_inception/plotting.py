"""Figures written next to the CSV reports."""

from __future__ import annotations

import math
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed metadata keeps PNG bytes identical across reruns
_PNG_METADATA = {"Software": None}


def pretty_plot(width=6.0, height=None):
    golden_ratio = (math.sqrt(5) - 1.0) / 2.0
    if not height:
        height = width * golden_ratio
    fig, ax = plt.subplots(figsize=(width, height), facecolor="w")
    ax.tick_params(labelsize=10)
    ax.grid(True, alpha=0.3)
    return fig, ax


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_METADATA)
    plt.close(fig)
    return path


def plot_quant_sweep(rows, path):
    """Best achievable accuracy / IoU against superpixel count, averaged over
    images at each requested count."""
    acc = defaultdict(list)
    iou = defaultdict(list)
    for row in rows:
        acc[row["target"]].append((row["M"], row["bestPixelAccuracy"]))
        iou[row["target"]].append((row["M"], row["bestIoU"]))
    fig, ax = pretty_plot()
    for label, series in (("pixel accuracy", acc), ("mean IoU", iou)):
        keys = sorted(series)
        xs = [sum(m for m, _ in series[k]) / len(series[k]) for k in keys]
        ys = [100.0 * sum(v for _, v in series[k]) / len(series[k]) for k in keys]
        ax.plot(xs, ys, marker="o", label=label)
    ax.set_xlabel("number of superpixels")
    ax.set_ylabel("best achievable score (%)")
    ax.legend(loc="lower right")
    return _save(fig, path)


def plot_cluster_sweep(rows, path):
    fig, ax = pretty_plot()
    xs = [r["meanM"] for r in rows]
    ys = [100.0 * r["meanIoU"] for r in rows]
    ax.plot(xs, ys, marker="o", color="C2")
    ax.set_xlabel("number of superpixels after merging")
    ax.set_ylabel("mean IoU (%)")
    return _save(fig, path)


def plot_training(metrics, path):
    fig, ax = pretty_plot()
    epochs = [r["epoch"] for r in metrics]
    ax.plot(epochs, [r["loss"] for r in metrics], color="C0", label="loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss", color="C0")
    twin = ax.twinx()
    twin.plot(epochs, [100.0 * r["meanIoU"] for r in metrics], color="C3", label="mean IoU")
    twin.set_ylabel("mean IoU (%)", color="C3")
    return _save(fig, path)

"""Matplotlib renderings for the CLI report paths.

Every function writes a PNG next to the delimited/JSON artifact it
illustrates. Only the CLI imports this module; the analysis core stays
free of raster output.
"""

from __future__ import annotations

from typing import List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .clustering import Dendrogram


def confusion_heatmap(confusion: np.ndarray, path: str,
                      labels: Optional[Sequence[str]] = None) -> None:
    confusion = np.asarray(confusion)
    n = confusion.shape[0]
    fig, ax = plt.subplots(figsize=(max(4, n * 0.45), max(3.5, n * 0.4)))
    im = ax.imshow(confusion, cmap="Blues")
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title("Confusion matrix")
    if labels is not None and n <= 30:
        ax.set_xticks(range(n), labels, rotation=90, fontsize=6)
        ax.set_yticks(range(n), labels, fontsize=6)
    if n <= 20:
        for i in range(n):
            for j in range(n):
                if confusion[i, j]:
                    ax.text(j, i, int(confusion[i, j]), ha="center", va="center",
                            fontsize=7, color="black")
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def strategy_bars(rows: Sequence[dict], path: str) -> None:
    names = [r["strategy"] for r in rows]
    accs = [100.0 * r["top1"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 3.2))
    bars = ax.bar(range(len(names)), accs, color="#4878a8")
    ax.set_xticks(range(len(names)), names, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("top-1 accuracy (%)")
    ax.set_ylim(0, 105)
    ax.bar_label(bars, fmt="%.1f", fontsize=7)
    ax.set_title("Prompt strategy ablation")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def frames_curve(rows: Sequence[dict], path: str) -> None:
    ks = [r["frames"] for r in rows]
    accs = [100.0 * r["top1"] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(ks, accs, marker="o", color="#4878a8")
    ax.set_xlabel("sampled frames per video")
    ax.set_ylabel("top-1 accuracy (%)")
    ax.set_title("Frame-count sweep")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def class_count_bars(stats: dict, path: str) -> None:
    classes = stats["classes"]
    ids = list(classes.keys())
    train = [classes[c]["train"] for c in ids]
    val = [classes[c]["val"] for c in ids]
    x = np.arange(len(ids))
    fig, ax = plt.subplots(figsize=(max(5, len(ids) * 0.35), 3.2))
    ax.bar(x - 0.2, train, width=0.4, label="train", color="#4878a8")
    ax.bar(x + 0.2, val, width=0.4, label="val", color="#d1903f")
    ax.set_xticks(x, ids, rotation=90, fontsize=7)
    ax.set_xlabel("class id")
    ax.set_ylabel("samples")
    ax.set_title("Per-class sample counts")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def dendrogram_figure(dendro: Dendrogram, path: str, title: str) -> None:
    """Draw the merge tree; uses scipy's renderer over our merge list."""
    from scipy.cluster.hierarchy import dendrogram as scipy_dendrogram

    linkage = np.array(
        [[a, b, max(h, 0.0), s] for a, b, h, s in dendro.merges], dtype=np.float64)
    fig, ax = plt.subplots(figsize=(max(6, dendro.n_leaves * 0.22), 4))
    scipy_dendrogram(linkage, labels=dendro.labels, leaf_rotation=90,
                     leaf_font_size=6, ax=ax)
    ax.set_title(title)
    ax.set_ylabel("merge cost")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def training_curve(history: List[dict], path: str) -> None:
    steps = [h["step"] for h in history]
    losses = [h["loss"] for h in history]
    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    ax.plot(steps, losses, lw=0.9, label="train loss", color="#4878a8")
    evals = [(h["step"], h["val_top1"]) for h in history if h["val_top1"] is not None]
    if evals:
        ax2 = ax.twinx()
        ax2.plot(*zip(*evals), marker="o", ms=3, color="#d1903f", label="val top-1")
        ax2.set_ylabel("val top-1")
        ax2.set_ylim(0, 1.05)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title("Training")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)

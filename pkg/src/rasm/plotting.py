"""Report figures rendered straight to PNG files."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def length_histogram(lengths: Sequence[int], path, max_len: int | None = None) -> Path:
    """Histogram of transcript lengths, with the label limit marked."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    top = max(list(lengths) + [max_len or 0, 1])
    ax.hist(lengths, bins=range(0, top + 2), color="0.35", edgecolor="white")
    if max_len is not None:
        ax.axvline(max_len + 0.5, color="tab:red", linestyle="--", label=f"limit {max_len}")
        ax.legend()
    ax.set_xlabel("tokens per line")
    ax.set_ylabel("lines")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def loss_curves(history, path) -> Path:
    """Training and validation loss per epoch, edit distance on a twin axis."""
    epochs = [r.epoch for r in history]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(epochs, [r.train_loss for r in history], label="train loss")
    ax.plot(epochs, [r.val_loss for r in history], label="val loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("CTC loss")
    ax2 = ax.twinx()
    ax2.plot(epochs, [r.val_edit_distance for r in history], color="0.5", linestyle=":",
             label="val edit distance")
    ax2.set_ylabel("mean edit distance")
    lines = ax.get_lines() + ax2.get_lines()
    ax.legend(lines, [l.get_label() for l in lines], loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def error_histogram(distances: Sequence[int], path) -> Path:
    """Per-line edit distances between reference and prediction."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    top = max(list(distances) + [1])
    ax.hist(distances, bins=range(0, top + 2), color="0.35", edgecolor="white")
    ax.set_xlabel("edit distance per line")
    ax.set_ylabel("lines")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)

"""Report figures rendered to image files next to the delimited outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")  # headless; must precede pyplot import

import matplotlib.pyplot as plt
import numpy as np


def loss_curve(initial_loss: float, epoch_loss: np.ndarray, path: str | Path) -> None:
    """Training loss per epoch, with the pre-training loss at epoch 0."""
    epochs = np.arange(len(epoch_loss) + 1)
    values = np.concatenate([[initial_loss], epoch_loss])
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(epochs, values, marker="o", markersize=3, linewidth=1.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean cross-entropy")
    ax.set_title("meta training loss")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def attention_bars(names: tuple[str, ...], mean_weights: np.ndarray, path: str | Path) -> None:
    """Horizontal bars of mean combination weight per candidate."""
    order = np.arange(len(names))[::-1]  # first candidate on top
    fig, ax = plt.subplots(figsize=(7, 0.5 * len(names) + 1.5))
    ax.barh(np.arange(len(names)), np.asarray(mean_weights)[order])
    ax.set_yticks(np.arange(len(names)))
    ax.set_yticklabels([names[i] for i in order])
    ax.set_xlabel("mean combination weight")
    ax.set_title("attention over candidates")
    ax.grid(True, axis="x", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cost_breakdown(names: list[str], us_per_instance: list[float], path: str | Path) -> None:
    """Bar chart of median inference cost per component."""
    fig, ax = plt.subplots(figsize=(7, 4))
    positions = np.arange(len(names))
    ax.bar(positions, us_per_instance)
    ax.set_xticks(positions)
    ax.set_xticklabels(names, rotation=30, ha="right")
    ax.set_ylabel("microseconds / instance (median)")
    ax.set_title("inference cost breakdown")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)

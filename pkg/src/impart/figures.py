"""Static figure emission for experiment reports."""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def entropy_histogram(benign: np.ndarray, poisoned: np.ndarray, path: str,
                      threshold: float = 0.2):
    fig, ax = plt.subplots(figsize=(6, 4))
    bins = np.linspace(
        min(benign.min(), poisoned.min()), max(benign.max(), poisoned.max()), 40
    )
    ax.hist(benign, bins=bins, alpha=0.6, label="benign inputs")
    ax.hist(poisoned, bins=bins, alpha=0.6, label="poisoned inputs")
    ax.axvline(threshold, color="red", linestyle="--", label="detection threshold")
    ax.set_xlabel("mean prediction entropy under superposition")
    ax.set_ylabel("count")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def sweep_curves(xs, asr, ba, xlabel: str, path: str, logx: bool = False):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(xs, asr, "o-", label="ASR")
    ax.plot(xs, ba, "s-", label="BA")
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("percent")
    ax.set_ylim(0, 100)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def image_grid(pairs, captions, path: str, max_pairs: int = 8):
    """Side-by-side clean/poisoned image rows with per-pair metric captions."""
    n = min(len(pairs), max_pairs)
    fig, axes = plt.subplots(n, 3, figsize=(7, 2.2 * n), squeeze=False)
    for r in range(n):
        clean, poisoned = pairs[r]
        diff = np.abs(poisoned - clean)
        scale = diff.max() if diff.max() > 0 else 1.0
        for c, (img, title) in enumerate(
            [(clean, "clean"), (poisoned, "poisoned"), (diff / scale, "|diff| (scaled)")]
        ):
            axes[r][c].imshow(np.clip(img, 0, 1))
            axes[r][c].set_axis_off()
            if r == 0:
                axes[r][c].set_title(title)
        axes[r][0].set_ylabel(captions[r], fontsize=7)
        axes[r][1].text(
            0.5, -0.12, captions[r], fontsize=7, ha="center",
            transform=axes[r][1].transAxes,
        )
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path

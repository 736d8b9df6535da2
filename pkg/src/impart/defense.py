"""STRIP entropy filtering and Spectral Signatures latent-space detection.

Both defenses run against a victim checkpoint and report whether poisoned
inputs separate from benign ones: STRIP via prediction entropy under
strong input superposition, Spectral Signatures via squared projection of
centered latents onto the top class-wise singular vector.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch

from .data import LabeledDataset


@dataclass(frozen=True)
class StripConfig:
    held_out: LabeledDataset
    num_overlays: int = 100
    blend_alpha: float = 0.5
    entropy_threshold: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if len(self.held_out) == 0:
            raise ValueError("held_out overlay source must be nonempty")
        if not 0.0 < self.blend_alpha < 1.0:
            raise ValueError("blend_alpha must be in (0, 1)")
        if self.entropy_threshold <= 0:
            raise ValueError("entropy_threshold must be positive")
        if self.num_overlays < 1:
            raise ValueError("num_overlays must be positive")


@dataclass(frozen=True)
class SpectralConfig:
    clean_reference: LabeledDataset | None = None
    layer: str = "penultimate"
    removal_fraction: float = 0.15

    def __post_init__(self):
        if not 0.0 < self.removal_fraction < 1.0:
            raise ValueError("removal_fraction must be in (0, 1)")


def _softmax_entropy(logits: torch.Tensor) -> torch.Tensor:
    logp = torch.log_softmax(logits, dim=1)
    return -(logp.exp() * logp).sum(dim=1)


def strip_entropies(model: torch.nn.Module, x: np.ndarray,
                    cfg: StripConfig) -> np.ndarray:
    """Per-overlay prediction entropies for one input image.

    The input is superimposed with num_overlays random held-out images
    (convex blend alpha * x + (1 - alpha) * overlay). Returns the natural
    log Shannon entropy of each blended prediction; callers reduce with
    mean (normalized statistic, bounded by ln(num_classes)) or sum.
    """
    model.eval()
    rng = np.random.default_rng(cfg.seed)
    idx = rng.integers(0, len(cfg.held_out), size=cfg.num_overlays)
    overlays = cfg.held_out.images[idx].astype(np.float32) / 255.0
    blends = cfg.blend_alpha * np.asarray(x, dtype=np.float32) + (
        1.0 - cfg.blend_alpha
    ) * overlays
    with torch.no_grad():
        logits = model(torch.from_numpy(blends).permute(0, 3, 1, 2))
        return _softmax_entropy(logits).numpy()


def strip_entropy(model: torch.nn.Module, x: np.ndarray,
                  cfg: StripConfig) -> float:
    """Mean entropy over overlays (the normalized STRIP statistic)."""
    return float(strip_entropies(model, x, cfg).mean())


def histogram_overlap(a: np.ndarray, b: np.ndarray, bins: int = 40) -> float:
    """Histogram intersection of two populations, in [0, 1]."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    if hi <= lo:
        return 1.0
    edges = np.linspace(lo, hi, bins + 1)
    pa, _ = np.histogram(a, bins=edges)
    pb, _ = np.histogram(b, bins=edges)
    return float(np.minimum(pa / len(a), pb / len(b)).sum())


def strip_sweep(model: torch.nn.Module, benign: np.ndarray, poisoned: np.ndarray,
                cfg: StripConfig) -> dict:
    """STRIP statistics over benign and poisoned populations.

    Each input gets its own overlay draw (seeded by population and index)
    so the two populations are scored independently but reproducibly.
    """
    if len(benign) == 0 or len(poisoned) == 0:
        raise ValueError("both populations must be nonempty")

    def _population(images, tag_seed):
        means, sums = [], []
        for i, img in enumerate(images):
            c = StripConfig(
                held_out=cfg.held_out,
                num_overlays=cfg.num_overlays,
                blend_alpha=cfg.blend_alpha,
                entropy_threshold=cfg.entropy_threshold,
                seed=cfg.seed * 1_000_003 + tag_seed * 7919 + i,
            )
            e = strip_entropies(model, img, c)
            means.append(float(e.mean()))
            sums.append(float(e.sum()))
        return np.asarray(means), np.asarray(sums)

    benign_mean, benign_sum = _population(benign, 0)
    poisoned_mean, poisoned_sum = _population(poisoned, 1)
    return {
        "benign_entropy": benign_mean,
        "poisoned_entropy": poisoned_mean,
        "benign_entropy_sum": benign_sum,
        "poisoned_entropy_sum": poisoned_sum,
        "min_poisoned_entropy": float(poisoned_mean.min()),
        "min_poisoned_entropy_sum": float(poisoned_sum.min()),
        "overlap": histogram_overlap(benign_mean, poisoned_mean),
        "threshold": cfg.entropy_threshold,
    }


def extract_latents(model: torch.nn.Module, dataset: LabeledDataset,
                    batch_size: int = 512) -> np.ndarray:
    """Penultimate-layer representations for every sample."""
    model.eval()
    x = torch.from_numpy(dataset.images_float()).permute(0, 3, 1, 2)
    outs = []
    with torch.no_grad():
        for lo in range(0, len(dataset), batch_size):
            _, latent = model(x[lo : lo + batch_size], return_latent=True)
            outs.append(latent.numpy())
    return np.concatenate(outs, axis=0)


def spectral_scores(model: torch.nn.Module, dataset: LabeledDataset,
                    cfg: SpectralConfig = SpectralConfig()) -> np.ndarray:
    """Per-sample outlier scores: squared projection onto the top singular
    vector of the class-centered latent matrix, computed per class."""
    if cfg.layer != "penultimate":
        raise ValueError(f"unknown latent layer {cfg.layer!r}")
    for c in range(dataset.num_classes):
        if int((dataset.labels == c).sum()) < 2:
            raise ValueError(f"class {c} has fewer than 2 samples")
    latents = extract_latents(model, dataset)
    scores = np.zeros(len(dataset))
    for c in range(dataset.num_classes):
        mask = dataset.labels == c
        h = latents[mask]
        centered = h - h.mean(axis=0, keepdims=True)
        # all-identical latents: zero matrix, zero scores (not an error)
        if np.allclose(centered, 0.0):
            continue
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        proj = centered @ vt[0]
        scores[mask] = proj**2
    return scores


def spectral_detect(scores: np.ndarray, labels: np.ndarray,
                    poisoned_indices, cfg: SpectralConfig = SpectralConfig()):
    """Flag the top removal_fraction of scores per class; score vs truth.

    Returns (flagged_indices, precision, recall); recall is NaN when the
    ground truth contains no poisoned samples.
    """
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    if len(scores) != len(labels):
        raise ValueError("scores and labels misaligned")
    poisoned = np.zeros(len(scores), dtype=bool)
    poisoned[np.asarray(list(poisoned_indices), dtype=int)] = True

    flagged = []
    for c in np.unique(labels):
        idx = np.nonzero(labels == c)[0]
        k = int(math.ceil(cfg.removal_fraction * len(idx)))
        top = idx[np.argsort(scores[idx])[::-1][:k]]
        flagged.extend(int(i) for i in top)
    flagged = np.asarray(sorted(flagged))
    n_poison = int(poisoned.sum())
    tp = int(poisoned[flagged].sum()) if len(flagged) else 0
    precision = tp / len(flagged) if len(flagged) else 0.0
    recall = tp / n_poison if n_poison else float("nan")
    return flagged, precision, recall

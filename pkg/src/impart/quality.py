"""Imperceptibility metrics: CIEDE2000, SSIM, PSNR, l2 and l-inf.

All metrics take a reference/test pair of H x W x 3 images in [0, 1] and
are averaged over batches for the quality tables. PSNR is capped at
PSNR_CAP_DB so identical pairs keep aggregates finite.
"""

from dataclasses import dataclass, asdict

import numpy as np
from scipy.signal import fftconvolve

from .color import delta_e00_map, delta_e00_norm, validate_rgb

PSNR_CAP_DB = 100.0

# SSIM defaults from the original structural-similarity formulation
_SSIM_WIN = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


@dataclass(frozen=True)
class QualityReport:
    """Aggregate (or single-pair) imperceptibility metrics."""

    mean_ciede2000: float
    ciede2000_l2: float
    ssim: float
    psnr_db: float
    l2: float
    linf: float
    psnr_capped: bool = False

    def as_dict(self) -> dict:
        return asdict(self)


def _check_pair(ref, test):
    ref = validate_rgb(ref, "ref")
    test = validate_rgb(test, "test")
    if ref.shape != test.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {test.shape}")
    return ref, test


def psnr(ref: np.ndarray, test: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB on the [0, 1] scale, capped at 100."""
    ref, test = _check_pair(ref, test)
    mse = float(np.mean((ref - test) ** 2))
    if mse < 1e-10:
        return PSNR_CAP_DB
    return float(min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse)))


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(r**2) / (2.0 * sigma**2))
    k2 = np.outer(k, k)
    return k2 / k2.sum()


def ssim(ref: np.ndarray, test: np.ndarray) -> float:
    """Mean local SSIM, 11x11 Gaussian window (sigma 1.5), per channel."""
    ref, test = _check_pair(ref, test)
    h, w = ref.shape[:2]
    if min(h, w) < _SSIM_WIN:
        raise ValueError(f"image {h}x{w} smaller than SSIM window {_SSIM_WIN}")
    kern = _gaussian_kernel(_SSIM_WIN, _SSIM_SIGMA)
    c1 = _SSIM_K1**2
    c2 = _SSIM_K2**2

    def _filt(x):
        return fftconvolve(x, kern, mode="valid")

    vals = []
    for c in range(3):
        x, y = ref[..., c], test[..., c]
        mu_x, mu_y = _filt(x), _filt(y)
        var_x = _filt(x * x) - mu_x**2
        var_y = _filt(y * y) - mu_y**2
        cov = _filt(x * y) - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
        den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def lp_distances(ref: np.ndarray, test: np.ndarray) -> tuple[float, float]:
    """(l2, linf) of the flattened image difference."""
    ref, test = _check_pair(ref, test)
    d = (ref - test).ravel()
    return float(np.linalg.norm(d)), float(np.max(np.abs(d)))


def pair_quality(ref: np.ndarray, test: np.ndarray) -> QualityReport:
    """All five metrics for one image pair (both CIEDE2000 reductions)."""
    de_map = delta_e00_map(ref, test)
    l2, linf = lp_distances(ref, test)
    p = psnr(ref, test)
    return QualityReport(
        mean_ciede2000=float(de_map.mean()),
        ciede2000_l2=delta_e00_norm(ref, test),
        ssim=ssim(ref, test),
        psnr_db=p,
        l2=l2,
        linf=linf,
        psnr_capped=p >= PSNR_CAP_DB,
    )


def batch_quality(pairs) -> tuple[QualityReport, list[QualityReport]]:
    """Arithmetic mean of each metric over pairs, plus per-pair records."""
    records = [pair_quality(ref, test) for ref, test in pairs]
    if not records:
        raise ValueError("batch_quality requires a nonempty pair sequence")
    agg = QualityReport(
        mean_ciede2000=float(np.mean([r.mean_ciede2000 for r in records])),
        ciede2000_l2=float(np.mean([r.ciede2000_l2 for r in records])),
        ssim=float(np.mean([r.ssim for r in records])),
        psnr_db=float(np.mean([r.psnr_db for r in records])),
        l2=float(np.mean([r.l2 for r in records])),
        linf=float(np.mean([r.linf for r in records])),
        psnr_capped=any(r.psnr_capped for r in records),
    )
    return agg, records

"""sRGB -> CIELAB conversion and the CIEDE2000 color difference.

Everything here is differentiable with torch so the trigger optimizer can
descend on the perceptual color difference directly. Public entry points
accept numpy arrays (H, W, 3) in [0, 1] and return numpy; the ``*_t``
variants operate on torch tensors with channels last and keep gradients.
"""

from dataclasses import dataclass

import numpy as np
import torch

# sRGB -> XYZ (D65, 2 degree observer)
_RGB2XYZ = torch.tensor(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ],
    dtype=torch.float64,
)
_WHITE_D65 = torch.tensor([0.95047, 1.0, 1.08883], dtype=torch.float64)

_EPS = 1e-9  # gradient guard inside square roots


@dataclass(frozen=True)
class Ciede2000Params:
    """Parametric weighting factors kL, kC, kH of the CIEDE2000 formula."""

    kL: float = 1.0
    kC: float = 1.0
    kH: float = 1.0

    def __post_init__(self):
        if min(self.kL, self.kC, self.kH) <= 0:
            raise ValueError("kL, kC, kH must be strictly positive")


@dataclass(frozen=True)
class LabImage:
    """Per-pixel CIE L*a*b* planes (L in [0, 100] for valid sRGB input)."""

    L: np.ndarray
    a: np.ndarray
    b: np.ndarray


def validate_rgb(img: np.ndarray, name: str = "image") -> np.ndarray:
    """Check an H x W x 3 array of normalized sRGB intensities."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[-1] != 3:
        raise ValueError(f"{name} must have shape (H, W, 3), got {img.shape}")
    if not np.isfinite(img).all():
        raise ValueError(f"{name} contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError(f"{name} has channel values outside [0, 1]")
    return img


def _safe_sqrt(x: torch.Tensor) -> torch.Tensor:
    # clamp keeps the zero point finite for autograd (sqrt'(0) is infinite)
    return torch.sqrt(torch.clamp(x, min=_EPS * _EPS))


def srgb_to_lab_t(rgb: torch.Tensor) -> torch.Tensor:
    """Convert (..., 3) sRGB in [0, 1] to (..., 3) CIE L*a*b* (D65)."""
    lin = torch.where(
        rgb <= 0.04045,
        rgb / 12.92,
        ((torch.clamp(rgb, min=0.04045) + 0.055) / 1.055) ** 2.4,
    )
    xyz = lin @ _RGB2XYZ.to(rgb.dtype).T
    t = xyz / _WHITE_D65.to(rgb.dtype)
    d3 = (6.0 / 29.0) ** 3
    # clamp before the cube root so the unselected branch cannot emit NaN grads
    f_cube = torch.clamp(t, min=d3) ** (1.0 / 3.0)
    f = torch.where(t > d3, f_cube, t / (3.0 * (6.0 / 29.0) ** 2) + 4.0 / 29.0)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return torch.stack([L, a, b], dim=-1)


def srgb_to_lab(img: np.ndarray) -> LabImage:
    """Numpy facade of :func:`srgb_to_lab_t` with input validation."""
    img = validate_rgb(img)
    lab = srgb_to_lab_t(torch.from_numpy(img)).numpy()
    return LabImage(L=lab[..., 0], a=lab[..., 1], b=lab[..., 2])


def ciede2000_lab_t(
    lab1: torch.Tensor,
    lab2: torch.Tensor,
    params: Ciede2000Params = Ciede2000Params(),
) -> torch.Tensor:
    """CIEDE2000 between two (..., 3) Lab tensors, elementwise over pixels.

    Implements the complete standard procedure: G chroma rescaling, hue
    angles with the +-360 branch rules, the T weighting function and the
    chroma-hue rotation term.
    """
    L1, a1, b1 = lab1[..., 0], lab1[..., 1], lab1[..., 2]
    L2, a2, b2 = lab2[..., 0], lab2[..., 1], lab2[..., 2]

    C1 = _safe_sqrt(a1 * a1 + b1 * b1)
    C2 = _safe_sqrt(a2 * a2 + b2 * b2)
    Cbar = 0.5 * (C1 + C2)
    Cbar7 = Cbar**7
    pow25_7 = 25.0**7
    G = 0.5 * (1.0 - _safe_sqrt(Cbar7 / (Cbar7 + pow25_7)))

    a1p = (1.0 + G) * a1
    a2p = (1.0 + G) * a2
    C1p = _safe_sqrt(a1p * a1p + b1 * b1)
    C2p = _safe_sqrt(a2p * a2p + b2 * b2)

    # hue angles in degrees; define hue 0 at the achromatic point so atan2
    # never sees (0, 0) in the backward pass
    zero1 = (a1p.abs() < 1e-12) & (b1.abs() < 1e-12)
    zero2 = (a2p.abs() < 1e-12) & (b2.abs() < 1e-12)
    one = torch.ones_like(a1p)
    h1p = torch.rad2deg(torch.atan2(b1, torch.where(zero1, one, a1p))) % 360.0
    h2p = torch.rad2deg(torch.atan2(b2, torch.where(zero2, one, a2p))) % 360.0
    h1p = torch.where(zero1, torch.zeros_like(h1p), h1p)
    h2p = torch.where(zero2, torch.zeros_like(h2p), h2p)

    dLp = L2 - L1
    dCp = C2p - C1p
    hdiff = h2p - h1p
    dhp = torch.where(hdiff > 180.0, hdiff - 360.0, hdiff)
    dhp = torch.where(hdiff < -180.0, hdiff + 360.0, dhp)
    dHp = 2.0 * _safe_sqrt(C1p * C2p) * torch.sin(torch.deg2rad(dhp) / 2.0)

    Lbarp = 0.5 * (L1 + L2)
    Cbarp = 0.5 * (C1p + C2p)
    hsum = h1p + h2p
    habs = (h1p - h2p).abs()
    hbarp = torch.where(
        habs <= 180.0,
        hsum / 2.0,
        torch.where(hsum < 360.0, (hsum + 360.0) / 2.0, (hsum - 360.0) / 2.0),
    )

    rad = torch.deg2rad
    T = (
        1.0
        - 0.17 * torch.cos(rad(hbarp - 30.0))
        + 0.24 * torch.cos(rad(2.0 * hbarp))
        + 0.32 * torch.cos(rad(3.0 * hbarp + 6.0))
        - 0.20 * torch.cos(rad(4.0 * hbarp - 63.0))
    )
    dtheta = 30.0 * torch.exp(-(((hbarp - 275.0) / 25.0) ** 2))
    Cbarp7 = Cbarp**7
    RC = 2.0 * _safe_sqrt(Cbarp7 / (Cbarp7 + pow25_7))
    Lm50sq = (Lbarp - 50.0) ** 2
    SL = 1.0 + 0.015 * Lm50sq / torch.sqrt(20.0 + Lm50sq)
    SC = 1.0 + 0.045 * Cbarp
    SH = 1.0 + 0.015 * Cbarp * T
    RT = -torch.sin(rad(2.0 * dtheta)) * RC

    tL = dLp / (params.kL * SL)
    tC = dCp / (params.kC * SC)
    tH = dHp / (params.kH * SH)
    return _safe_sqrt(tL * tL + tC * tC + tH * tH + RT * tC * tH)


def delta_e00_map_t(
    img_a: torch.Tensor,
    img_b: torch.Tensor,
    params: Ciede2000Params = Ciede2000Params(),
) -> torch.Tensor:
    """Per-pixel CIEDE2000 between two (..., 3) sRGB tensors in [0, 1]."""
    return ciede2000_lab_t(srgb_to_lab_t(img_a), srgb_to_lab_t(img_b), params)


def delta_e00_norm_t(
    img_a: torch.Tensor,
    img_b: torch.Tensor,
    params: Ciede2000Params = Ciede2000Params(),
) -> torch.Tensor:
    """l2 norm of the flattened per-pixel CIEDE2000 map (differentiable)."""
    de = delta_e00_map_t(img_a, img_b, params)
    return _safe_sqrt((de * de).sum())


def _check_pair(img_a: np.ndarray, img_b: np.ndarray):
    img_a = validate_rgb(img_a, "img_a")
    img_b = validate_rgb(img_b, "img_b")
    if img_a.shape != img_b.shape:
        raise ValueError(f"shape mismatch: {img_a.shape} vs {img_b.shape}")
    return img_a, img_b


def delta_e00_map(
    img_a: np.ndarray,
    img_b: np.ndarray,
    params: Ciede2000Params = Ciede2000Params(),
) -> np.ndarray:
    """Per-pixel CIEDE2000 map between two RGB images (numpy, float64)."""
    img_a, img_b = _check_pair(img_a, img_b)
    return (
        delta_e00_map_t(torch.from_numpy(img_a), torch.from_numpy(img_b), params)
        .numpy()
    )


def delta_e00_norm(
    img_a: np.ndarray,
    img_b: np.ndarray,
    params: Ciede2000Params = Ciede2000Params(),
) -> float:
    """Scalar l2 reduction of the per-pixel CIEDE2000 map."""
    img_a, img_b = _check_pair(img_a, img_b)
    return float(
        delta_e00_norm_t(torch.from_numpy(img_a), torch.from_numpy(img_b), params)
    )

"""Structural similarity and the slab convention used to report it.

SSIM uses a Gaussian window (sigma 1.5, 11 taps per axis), K1 = 0.01,
K2 = 0.03, and works on 2-D images or 3-D volumes. Volume quality is
reported as the SSIM of 5-voxel-thick central slabs averaged along the
tilt axis, so the (z, x) plane with its missing-wedge artifacts is what
gets scored.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

_SIGMA = 1.5
_TRUNCATE = 3.5  # 11-tap window at sigma 1.5


def ssim(a: np.ndarray, b: np.ndarray, data_range: float | None = None) -> float:
    """Mean structural similarity between two equally-shaped arrays.

    Parameters
    ----------
    a, b : arrays of matching shape (2-D or 3-D).
    data_range : float, optional
        Dynamic range of the data. Defaults to the joint min-to-max span
        of both inputs; pass it explicitly when comparing against a known
        reference scale.

    Returns
    -------
    float in [-1, 1]; exactly 1 when the inputs are identical.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim not in (2, 3):
        raise ValueError(f"ssim supports 2-D or 3-D arrays, got {a.ndim}-D")
    if data_range is None:
        span = max(a.max(), b.max()) - min(a.min(), b.min())
        data_range = span if span > 0 else 1.0
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2

    blur = lambda x: gaussian_filter(x, _SIGMA, truncate=_TRUNCATE, mode="reflect")
    mu_a = blur(a)
    mu_b = blur(b)
    var_a = blur(a * a) - mu_a * mu_a
    var_b = blur(b * b) - mu_b * mu_b
    cov = blur(a * b) - mu_a * mu_b
    ssim_map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    )
    radius = int(_TRUNCATE * _SIGMA + 0.5)
    if all(s > 2 * radius for s in ssim_map.shape):
        core = tuple(slice(radius, s - radius) for s in ssim_map.shape)
        ssim_map = ssim_map[core]
    return float(ssim_map.mean())


def central_slab(volume: np.ndarray, thickness: int = 5, axis: int = 1) -> np.ndarray:
    """Average of the central ``thickness`` slices along ``axis``.

    For volumes indexed [z, y, x] the default axis 1 averages along the
    tilt axis, producing a (z, x) image with the beam direction vertical.
    """
    volume = np.asarray(volume)
    if volume.ndim != 3:
        raise ValueError(f"expected a 3-D volume, got shape {volume.shape}")
    n = volume.shape[axis]
    if thickness < 1 or thickness > n:
        raise ValueError(f"thickness {thickness} outside [1, {n}]")
    lo = (n - thickness) // 2
    sl = [slice(None)] * 3
    sl[axis] = slice(lo, lo + thickness)
    return volume[tuple(sl)].mean(axis=axis)


def slab_ssim(
    volume: np.ndarray,
    reference: np.ndarray,
    thickness: int = 5,
    data_range: float | None = None,
) -> float:
    """SSIM between central slabs of a volume and a reference volume."""
    return ssim(
        central_slab(volume, thickness=thickness),
        central_slab(reference, thickness=thickness),
        data_range=data_range,
    )

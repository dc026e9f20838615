"""Preprocessing: polynomial background removal and Fourier downsampling.

Backgrounds are modeled as bivariate Bernstein polynomial surfaces fitted
by least squares over a background mask (default: the dimmer half of the
image), then subtracted with a clamp at zero. Downsampling crops the
centered Fourier spectrum, which preserves band-limited content exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import comb


@dataclass
class BackgroundModel:
    """Fitted Bernstein surface: degrees (dx, dy) and (dx+1, dy+1) coeffs."""

    degree: tuple[int, int]
    coefficients: np.ndarray


def bernstein_basis(degree: int, t: np.ndarray) -> np.ndarray:
    """Bernstein basis values B_{i,degree}(t), shape (len(t), degree + 1).

    The basis is a partition of unity: rows sum to 1 for t in [0, 1].
    """
    t = np.asarray(t, dtype=np.float64)[:, None]
    i = np.arange(degree + 1)[None, :]
    return comb(degree, i) * t**i * (1.0 - t) ** (degree - i)


def _image_axes(shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    h, w = shape
    u = (np.arange(w) + 0.5) / w
    v = (np.arange(h) + 0.5) / h
    return u, v


def make_background_mask(image: np.ndarray, quantile: float = 0.5) -> np.ndarray:
    """Heuristic background mask: pixels at or below an intensity quantile."""
    image = np.asarray(image)
    return image <= np.quantile(image, quantile)


def fit_background(
    image: np.ndarray,
    mask: np.ndarray | None = None,
    degree: tuple[int, int] = (3, 3),
) -> BackgroundModel:
    """Least-squares fit of a Bernstein surface over the masked pixels.

    Parameters
    ----------
    image : (H, W) array
    mask : optional bool array marking background pixels; defaults to
        :func:`make_background_mask`.
    degree : (dx, dy) polynomial degrees along the x (column) and y (row)
        axes.

    Raises
    ------
    ValueError
        If the masked system is rank-deficient (too few or degenerate
        background pixels for the requested degree).
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {image.shape}")
    if mask is None:
        mask = make_background_mask(image)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != image.shape:
        raise ValueError(f"mask shape {mask.shape} does not match image {image.shape}")
    dx, dy = degree
    u, v = _image_axes(image.shape)
    bu = bernstein_basis(dx, u)
    bv = bernstein_basis(dy, v)
    rows, cols = np.nonzero(mask)
    design = (bv[rows][:, :, None] * bu[cols][:, None, :]).reshape(len(rows), -1)
    n_terms = (dx + 1) * (dy + 1)
    coeffs, _, rank, _ = np.linalg.lstsq(design, image[mask], rcond=None)
    if rank < n_terms:
        raise ValueError(
            f"background fit of degree {degree} is rank-deficient "
            f"({rank}/{n_terms}); use a lower degree or a larger mask"
        )
    return BackgroundModel(degree=(dx, dy), coefficients=coeffs.reshape(dy + 1, dx + 1))


def evaluate_background(model: BackgroundModel, shape: tuple[int, int]) -> np.ndarray:
    """Render the fitted surface on an image grid."""
    dx, dy = model.degree
    u, v = _image_axes(shape)
    bu = bernstein_basis(dx, u)
    bv = bernstein_basis(dy, v)
    return bv @ model.coefficients @ bu.T


def subtract_background(image: np.ndarray, model: BackgroundModel) -> np.ndarray:
    """Subtract the fitted surface, clamping the result at zero."""
    image = np.asarray(image, dtype=np.float64)
    surface = evaluate_background(model, image.shape)
    return np.clip(image - surface, 0.0, None).astype(np.float32)


def _fourier_resample(image: np.ndarray, size: int) -> np.ndarray:
    """Crop or zero-pad the centered spectrum to size x size."""
    image = np.asarray(image, dtype=np.float64)
    n = image.shape[0]
    spectrum = np.fft.fftshift(np.fft.fft2(image))
    out = np.zeros((size, size), dtype=complex)
    m = min(n, size)
    src = (n - m) // 2
    dst = (size - m) // 2
    out[dst : dst + m, dst : dst + m] = spectrum[src : src + m, src : src + m]
    resampled = np.fft.ifft2(np.fft.ifftshift(out)) * (size / n) ** 2
    return np.real(resampled)


def fourier_downsample(image: np.ndarray, size: int) -> np.ndarray:
    """Downsample a square image by cropping its centered spectrum.

    Scaled by (size / n)^2 so mean intensity is preserved; band-limited
    images survive a round trip through :func:`fourier_upsample` exactly.
    """
    image = np.asarray(image)
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise ValueError(f"expected a square image, got shape {image.shape}")
    if size > image.shape[0]:
        raise ValueError(f"target size {size} exceeds image size {image.shape[0]}")
    if size < 1:
        raise ValueError("target size must be positive")
    return _fourier_resample(image, size).astype(np.float32)


def fourier_upsample(image: np.ndarray, size: int) -> np.ndarray:
    """Zero-pad the centered spectrum up to size x size (inverse crop)."""
    image = np.asarray(image)
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise ValueError(f"expected a square image, got shape {image.shape}")
    if size < image.shape[0]:
        raise ValueError(f"target size {size} below image size {image.shape[0]}")
    return _fourier_resample(image, size).astype(np.float32)


def downsample_series(images: np.ndarray, size: int) -> np.ndarray:
    """Fourier-downsample every image in a stack."""
    return np.stack([fourier_downsample(img, size) for img in np.asarray(images)])

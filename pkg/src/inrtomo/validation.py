"""Input validation shared by the estimators and the CLI."""

from __future__ import annotations

import numpy as np
from sklearn.utils import check_array


def check_tilt_stack(X) -> np.ndarray:
    """Validate a projection stack: finite (M, N, N) float32 array."""
    X = check_array(X, allow_nd=True, dtype=np.float32)
    if X.ndim != 3:
        raise ValueError(f"expected a 3-D stack (M, N, N), got {X.ndim}-D data")
    if X.shape[1] != X.shape[2]:
        raise ValueError(f"expected square images, got {X.shape[1]}x{X.shape[2]}")
    return X


def check_angles(angles_deg, n_images: int) -> np.ndarray:
    """Validate tilt angles: finite 1-D, one per image."""
    angles = np.asarray(angles_deg, dtype=np.float64).ravel()
    if len(angles) != n_images:
        raise ValueError(f"{len(angles)} angles for {n_images} images")
    if not np.all(np.isfinite(angles)):
        raise ValueError("angles contain non-finite values")
    return angles


def check_volume(values) -> np.ndarray:
    """Validate a cubic, finite 3-D volume."""
    values = check_array(values, allow_nd=True, dtype=np.float32)
    if values.ndim != 3 or len(set(values.shape)) != 1:
        raise ValueError(f"expected a cubic volume, got shape {values.shape}")
    return values


def check_coords(coords) -> np.ndarray:
    """Validate query coordinates: finite (B, 3) float array."""
    coords = check_array(coords, dtype=np.float32)
    if coords.shape[1] != 3:
        raise ValueError(f"expected (B, 3) coordinates, got {coords.shape}")
    return coords

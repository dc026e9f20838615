"""Synthetic experiments: phantom, reference projector, dose, misalignment.

The phantom packs structures of varied spatial frequency inside an
ellipsoidal membrane shell: a spiked "sea mine" sphere dotted with
atomic-scale bright points, a pyramid for sharp edges, and a smooth cheese
wedge. Values lie in [0, 1] and the support stays inside the inscribed
sphere so every projection sees the whole object.

The reference projector integrates a voxel grid along the same rays the
neural field trains on, using trilinear interpolation (zero outside the
voxel-center hull). It is deliberately independent of the field code so
the two forward models can be cross-checked against each other.
"""

from __future__ import annotations

import numpy as np
import torch

from .geometry import Pose, ray_bundle, detector_coords
from .io import TiltSeries


def _voxel_axis(size: int) -> np.ndarray:
    return -1.0 + (2.0 * np.arange(size) + 1.0) / size


def make_phantom(size: int = 200, seed: int = 0) -> np.ndarray:
    """Build the synthetic specimen on a size^3 grid, indexed [z, y, x].

    Deterministic in ``seed`` (jitters placement and sizes); values in
    [0, 1]; support inside radius 0.85.
    """
    if size < 8:
        raise ValueError("phantom needs size >= 8")
    rng = np.random.default_rng(seed)
    axis = _voxel_axis(size)
    zz, yy, xx = np.meshgrid(axis, axis, axis, indexing="ij")
    vol = np.zeros((size, size, size), dtype=np.float64)

    def put(mask, value):
        np.maximum(vol, np.where(mask, value, 0.0), out=vol)

    # Membrane: thin ellipsoidal shell around everything.
    semi = np.array([0.78, 0.72, 0.66]) + rng.uniform(-0.02, 0.02, 3)
    rho = np.sqrt((xx / semi[0]) ** 2 + (yy / semi[1]) ** 2 + (zz / semi[2]) ** 2)
    thickness = max(0.035, 1.2 * (2.0 / size))
    put(np.abs(rho - 1.0) < (thickness / 2.0) / np.min(semi), 0.5)

    # Sea mine: solid sphere with radial spikes and bright dots.
    mine_c = np.array([-0.24, 0.18, 0.10]) + rng.uniform(-0.03, 0.03, 3)
    mine_r = 0.17 + rng.uniform(-0.01, 0.01)
    dx, dy, dz = xx - mine_c[0], yy - mine_c[1], zz - mine_c[2]
    dist = np.sqrt(dx * dx + dy * dy + dz * dz)
    put(dist <= mine_r, 0.55)
    n_spikes = 10
    golden = np.pi * (3.0 - np.sqrt(5.0))
    for k in range(n_spikes):
        cos_t = 1.0 - 2.0 * (k + 0.5) / n_spikes
        sin_t = np.sqrt(1.0 - cos_t * cos_t)
        phi = golden * k + rng.uniform(-0.1, 0.1)
        d = np.array([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t])
        proj = dx * d[0] + dy * d[1] + dz * d[2]
        along = np.clip(proj, mine_r, mine_r + 0.14)
        perp2 = dist * dist - proj * proj
        seg = np.sqrt(np.maximum(perp2, 0.0) + (proj - along) ** 2)
        put((seg <= 0.035) & (proj > 0), 0.75)
        tip = mine_c + d * (mine_r + 0.15)
        tip_d2 = (xx - tip[0]) ** 2 + (yy - tip[1]) ** 2 + (zz - tip[2]) ** 2
        if k % 3 == 0:
            put(tip_d2 <= max(0.022, 1.5 / size) ** 2, 1.0)

    # Pyramid: square base in x-y shrinking along z; hard edges.
    pyr_c = np.array([0.30, -0.28, -0.16]) + rng.uniform(-0.03, 0.03, 3)
    height, base = 0.34, 0.20
    rel = (zz - pyr_c[2]) / height
    half = base * (1.0 - rel)
    inside = (rel >= 0.0) & (rel <= 1.0)
    inside &= (np.abs(xx - pyr_c[0]) <= half) & (np.abs(yy - pyr_c[1]) <= half)
    put(inside, 0.65)

    # Cheese wedge: low-frequency cylinder sector.
    wed_c = np.array([0.18, 0.32, 0.28]) + rng.uniform(-0.03, 0.03, 3)
    wx, wy, wz = xx - wed_c[0], yy - wed_c[1], zz - wed_c[2]
    radius, half_height = 0.26, 0.14
    ang = np.arctan2(wy, wx)
    sector = (np.sqrt(wx * wx + wy * wy) <= radius) & (np.abs(wz) <= half_height)
    sector &= (ang >= -0.2) & (ang <= 1.1)
    put(sector, 0.4)

    # Keep the support strictly inside the inscribed sphere.
    vol[np.sqrt(xx * xx + yy * yy + zz * zz) > 0.85] = 0.0
    return vol.astype(np.float32)


def _trilinear(volume: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Sample a [z, y, x] voxel grid at (x, y, z) points; zero outside."""
    d = volume.shape[0]
    idx = (coords + 1.0) * (d / 2.0) - 0.5
    out = np.zeros(coords.shape[0], dtype=np.float64)
    i0 = np.floor(idx).astype(np.int64)
    frac = idx - i0
    for corner in range(8):
        off = np.array([(corner >> 2) & 1, (corner >> 1) & 1, corner & 1])
        ic = i0 + off
        w = np.prod(np.where(off == 1, frac, 1.0 - frac), axis=1)
        ok = np.all((ic >= 0) & (ic < d), axis=1) & (w > 0)
        if not np.any(ok):
            continue
        ix, iy, iz = ic[ok, 0], ic[ok, 1], ic[ok, 2]
        out[ok] += w[ok] * volume[iz, iy, ix]
    return out


def project_volume(
    volume: np.ndarray,
    pose: Pose,
    n_pixels: int | None = None,
    sample_count: int | None = None,
) -> np.ndarray:
    """Project a voxel grid through one pose onto an N x N detector.

    Rays, clipping and quadrature match the neural forward model exactly;
    only the field evaluation is replaced by trilinear interpolation.
    Defaults: detector matches the grid, 2 samples per voxel.
    """
    volume = np.asarray(volume, dtype=np.float64)
    if volume.ndim != 3 or len(set(volume.shape)) != 1:
        raise ValueError(f"volume must be cubic, got shape {volume.shape}")
    d = volume.shape[0]
    if n_pixels is None:
        n_pixels = d
    if sample_count is None:
        sample_count = 2 * d
    xy = detector_coords(n_pixels, dtype=torch.float64)
    b = xy.shape[0]
    ones = torch.ones(b, dtype=torch.float64)
    with torch.no_grad():
        coords, seg, hit = ray_bundle(
            ones * pose.z1,
            ones * pose.theta,
            ones * pose.z3,
            ones * pose.delta_x,
            ones * pose.delta_y,
            xy,
            sample_count,
        )
    coords = coords.numpy().reshape(-1, 3)
    values = _trilinear(volume, coords).reshape(b, sample_count)
    image = seg.numpy() * values.sum(axis=1)
    image[~hit.numpy()] = 0.0
    return image.reshape(n_pixels, n_pixels).astype(np.float32)


def project_tilt_series(
    volume: np.ndarray,
    angles_deg,
    poses: list[Pose] | None = None,
    n_pixels: int | None = None,
    sample_count: int | None = None,
) -> TiltSeries:
    """Project a volume at each tilt angle into a TiltSeries.

    Explicit ``poses`` (e.g. misaligned ones) override the ideal poses
    derived from ``angles_deg``.
    """
    angles_deg = np.asarray(angles_deg, dtype=np.float64)
    if poses is None:
        poses = [Pose(theta=t) for t in np.deg2rad(angles_deg)]
    if len(poses) != len(angles_deg):
        raise ValueError(f"{len(poses)} poses for {len(angles_deg)} angles")
    images = np.stack(
        [project_volume(volume, p, n_pixels=n_pixels, sample_count=sample_count) for p in poses]
    )
    return TiltSeries(images=images, angles_deg=angles_deg)


def apply_dose(image: np.ndarray, counts_per_pixel: float, seed: int = 0) -> np.ndarray:
    """Poisson dose noise: draw Poisson(image * dose) / dose per pixel.

    ``image`` must be nonnegative; the expectation of the output equals the
    input and its variance is image / dose. Deterministic in ``seed``.
    """
    image = np.asarray(image, dtype=np.float64)
    if counts_per_pixel <= 0:
        raise ValueError("counts_per_pixel must be positive")
    if np.any(image < 0):
        raise ValueError("dose noise needs a nonnegative image")
    rng = np.random.default_rng(seed)
    return (rng.poisson(image * counts_per_pixel) / counts_per_pixel).astype(np.float32)


def add_noise(series: TiltSeries, counts_per_pixel: float, seed: int = 0) -> TiltSeries:
    """Apply dose noise to a stack, counting relative to peak intensity.

    The stack is normalized to peak 1 so ``counts_per_pixel`` means counts
    at the brightest pixel, then restored to its original scale.
    """
    peak = float(np.max(series.images))
    if peak <= 0:
        raise ValueError("cannot set dose on a non-positive stack")
    noisy = apply_dose(series.images / peak, counts_per_pixel, seed=seed) * peak
    return TiltSeries(images=noisy, angles_deg=series.angles_deg, pixel_size_nm=series.pixel_size_nm)


def inject_misalignment(
    poses: list[Pose],
    tilt_axis_error_rad: float,
    shift_sigma_px: float,
    n_pixels: int,
    seed: int = 0,
) -> tuple[list[Pose], dict]:
    """Perturb poses: systematic z1 offset plus Gaussian in-plane shifts.

    Shift sigma is in pixels and converted to normalized units (2 / N).
    Returns the perturbed poses and a ground-truth record of the injected
    offsets (radians and normalized units).
    """
    rng = np.random.default_rng(seed)
    scale = 2.0 / n_pixels
    dx = rng.normal(0.0, shift_sigma_px, len(poses)) * scale
    dy = rng.normal(0.0, shift_sigma_px, len(poses)) * scale
    out = []
    for j, p in enumerate(poses):
        out.append(
            Pose(
                theta=p.theta,
                z1=p.z1 + tilt_axis_error_rad,
                z3=p.z3,
                delta_x=p.delta_x + dx[j],
                delta_y=p.delta_y + dy[j],
            )
        )
    truth = {
        "tilt_axis_error_rad": float(tilt_axis_error_rad),
        "shift_sigma_px": float(shift_sigma_px),
        "delta_x": dx.tolist(),
        "delta_y": dy.tolist(),
        "seed": int(seed),
    }
    return out, truth


def subsample_tilts(series: TiltSeries, max_angle_deg: float, step_deg: float) -> TiltSeries:
    """Keep images with |angle| <= max on a step grid anchored at -max.

    An image survives iff ``angle + max_angle`` is an integer multiple of
    ``step`` (tolerance 1e-6 deg), which keeps symmetric ranges symmetric.
    Raises if nothing survives.
    """
    if step_deg <= 0:
        raise ValueError("step_deg must be positive")
    angles = series.angles_deg
    offset = angles + max_angle_deg
    on_grid = np.abs(offset - step_deg * np.round(offset / step_deg)) < 1e-6
    keep = on_grid & (np.abs(angles) <= max_angle_deg + 1e-6)
    if not np.any(keep):
        raise ValueError(
            f"no tilts survive max_angle {max_angle_deg} deg at step {step_deg} deg"
        )
    return TiltSeries(
        images=series.images[keep],
        angles_deg=angles[keep],
        pixel_size_nm=series.pixel_size_nm,
    )

"""Classical baseline: sparse Radon transform, SIRT, coarse alignment.

The projector is a rotate-and-sum parallel-beam Radon transform with
bilinear interpolation, materialized as a sparse matrix so the
backprojection is its exact adjoint. SIRT runs slice-by-slice
perpendicular to the tilt axis, sharing one projector across all slices:

    x <- x + relaxation * C (A^T (R (b - A x))),   x clamped >= 0

with R and C the inverse row/column sums of A.

Alignment: pairwise FFT cross-correlation with parabolic sub-pixel
refinement, accumulated into per-image shifts relative to the first image.
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.ndimage
import scipy.sparse


class ParallelProjector:
    """Sparse parallel-beam Radon operator for n x n slices.

    Rows of the matrix are (angle, detector bin) pairs; columns are slice
    pixels in row-major [z, x] order. At angle 0 the projection of a slice
    equals its column sums. Samples falling outside the slice contribute
    nothing (zero padding), so objects should live inside the inscribed
    circle.
    """

    def __init__(self, n: int, angles_rad):
        angles = np.atleast_1d(np.asarray(angles_rad, dtype=np.float64))
        if angles.ndim != 1 or len(angles) == 0:
            raise ValueError("angles_rad must be a non-empty 1-D sequence")
        self.n = int(n)
        self.angles_rad = angles
        self.matrix = self._build(self.n, angles)
        self._row_weight = _safe_reciprocal(np.asarray(self.matrix.sum(axis=1)).ravel())
        self._col_weight = _safe_reciprocal(np.asarray(self.matrix.sum(axis=0)).ravel())

    @staticmethod
    def _build(n: int, angles: np.ndarray) -> scipy.sparse.csr_matrix:
        centered = np.arange(n, dtype=np.float64) - (n - 1) / 2.0
        u, v = np.meshgrid(centered, centered, indexing="ij")
        u_idx = np.repeat(np.arange(n), n)
        rows_list, cols_list, vals_list = [], [], []
        for a, theta in enumerate(angles):
            c, s = np.cos(theta), np.sin(theta)
            x = u * c + v * s + (n - 1) / 2.0
            z = -u * s + v * c + (n - 1) / 2.0
            x0 = np.floor(x)
            z0 = np.floor(z)
            fx = (x - x0).ravel()
            fz = (z - z0).ravel()
            x0 = x0.astype(np.int64).ravel()
            z0 = z0.astype(np.int64).ravel()
            for dz, dx, w in (
                (0, 0, (1 - fz) * (1 - fx)),
                (0, 1, (1 - fz) * fx),
                (1, 0, fz * (1 - fx)),
                (1, 1, fz * fx),
            ):
                zi, xi = z0 + dz, x0 + dx
                ok = (zi >= 0) & (zi < n) & (xi >= 0) & (xi < n) & (w > 0)
                rows_list.append(a * n + u_idx[ok])
                cols_list.append(zi[ok] * n + xi[ok])
                vals_list.append(w[ok])
        rows = np.concatenate(rows_list)
        cols = np.concatenate(cols_list)
        vals = np.concatenate(vals_list)
        mat = scipy.sparse.coo_matrix(
            (vals, (rows, cols)), shape=(len(angles) * n, n * n)
        )
        return mat.tocsr()

    def radon(self, image: np.ndarray) -> np.ndarray:
        """Project a slice; returns a (num_angles, n) sinogram in pixel units."""
        image = np.asarray(image, dtype=np.float64)
        if image.shape != (self.n, self.n):
            raise ValueError(f"expected a {self.n}x{self.n} slice, got {image.shape}")
        return (self.matrix @ image.ravel()).reshape(len(self.angles_rad), self.n)

    def backproject(self, sinogram: np.ndarray) -> np.ndarray:
        """Exact adjoint of :meth:`radon`."""
        sinogram = np.asarray(sinogram, dtype=np.float64)
        if sinogram.shape != (len(self.angles_rad), self.n):
            raise ValueError(
                f"expected a {len(self.angles_rad)}x{self.n} sinogram, got {sinogram.shape}"
            )
        return (self.matrix.T @ sinogram.ravel()).reshape(self.n, self.n)

    def sirt(
        self,
        sinograms: np.ndarray,
        iterations: int = 100,
        relaxation: float = 1.0,
        positivity: bool = True,
        return_residuals: bool = False,
    ):
        """Run SIRT on a stack of sinograms sharing this geometry.

        ``sinograms`` has shape (num_angles, K, n) for K independent
        slices; returns (K, n, n) reconstructions indexed [k, z, x]. With
        ``return_residuals`` also returns the residual norm ||b - A x||
        before each update.
        """
        sinograms = np.asarray(sinograms, dtype=np.float64)
        n_angles = len(self.angles_rad)
        if sinograms.ndim == 2:
            sinograms = sinograms[:, None, :]
        if sinograms.shape[0] != n_angles or sinograms.shape[2] != self.n:
            raise ValueError(
                f"expected sinograms ({n_angles}, K, {self.n}), got {sinograms.shape}"
            )
        k = sinograms.shape[1]
        b = sinograms.transpose(0, 2, 1).reshape(n_angles * self.n, k)
        x = np.zeros((self.n * self.n, k))
        residuals = []
        for _ in range(iterations):
            residual = b - self.matrix @ x
            if return_residuals:
                residuals.append(float(np.linalg.norm(residual)))
            x += relaxation * self._col_weight[:, None] * (
                self.matrix.T @ (self._row_weight[:, None] * residual)
            )
            if positivity:
                np.maximum(x, 0.0, out=x)
        volumes = x.reshape(self.n, self.n, k).transpose(2, 0, 1)
        if return_residuals:
            return volumes, residuals
        return volumes


def _safe_reciprocal(v: np.ndarray) -> np.ndarray:
    out = np.zeros_like(v)
    np.divide(1.0, v, out=out, where=v > 1e-12)
    return out


_projector_cache: dict[tuple, ParallelProjector] = {}


def _cached_projector(n: int, angles_rad) -> ParallelProjector:
    key = (int(n), np.asarray(angles_rad, dtype=np.float64).tobytes())
    if key not in _projector_cache:
        if len(_projector_cache) > 8:
            _projector_cache.clear()
        _projector_cache[key] = ParallelProjector(n, angles_rad)
    return _projector_cache[key]


def radon(image: np.ndarray, angles_rad) -> np.ndarray:
    """Parallel-beam Radon transform of a square image, pixel-length units."""
    image = np.asarray(image)
    return _cached_projector(image.shape[0], angles_rad).radon(image)


def backproject(sinogram: np.ndarray, angles_rad, n: int | None = None) -> np.ndarray:
    """Adjoint of :func:`radon` (unfiltered backprojection)."""
    sinogram = np.asarray(sinogram)
    if n is None:
        n = sinogram.shape[1]
    return _cached_projector(n, angles_rad).backproject(sinogram)


def sirt_reconstruct(
    images: np.ndarray,
    angles_rad,
    iterations: int = 100,
    relaxation: float = 1.0,
    positivity: bool = True,
) -> np.ndarray:
    """SIRT-reconstruct a volume from a tilt series.

    ``images`` is (M, N, N) with rows along the tilt axis (y). Each y-row
    forms an independent slice problem in the (z, x) plane. Projections are
    measured in normalized-coordinate units (sample spacing 2/N), so they
    are scaled by N/2 to the projector's pixel units; the returned
    (N, N, N) volume indexed [z, y, x] is then in the same intensity units
    as the projections' integrand.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3 or images.shape[1] != images.shape[2]:
        raise ValueError(f"expected (M, N, N) images, got {images.shape}")
    n = images.shape[1]
    projector = _cached_projector(n, angles_rad)
    sinograms = images * (n / 2.0)
    slices = projector.sirt(
        sinograms, iterations=iterations, relaxation=relaxation, positivity=positivity
    )
    return slices.transpose(1, 0, 2).astype(np.float32)


def cross_correlation_align(stack: np.ndarray) -> np.ndarray:
    """Coarse translational alignment of a projection stack.

    Estimates the (row, col) displacement of each image relative to the
    first by accumulating pairwise FFT cross-correlation peaks with
    parabolic sub-pixel refinement. A constant image cannot be aligned and
    yields a zero pairwise shift with a warning. Apply with
    :func:`apply_shifts` to resample the stack onto the first image.
    """
    stack = np.asarray(stack, dtype=np.float64)
    if stack.ndim != 3:
        raise ValueError(f"expected a (M, H, W) stack, got {stack.shape}")
    shifts = np.zeros((len(stack), 2))
    for j in range(1, len(stack)):
        pair = _pairwise_shift(stack[j - 1], stack[j])
        shifts[j] = shifts[j - 1] + pair
    return shifts


def _pairwise_shift(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = a - a.mean()
    b = b - b.mean()
    if a.std() < 1e-12 or b.std() < 1e-12:
        warnings.warn("constant image in stack; assuming zero shift", stacklevel=3)
        return np.zeros(2)
    corr = np.real(np.fft.ifft2(np.conj(np.fft.fft2(a)) * np.fft.fft2(b)))
    peak = np.array(np.unravel_index(np.argmax(corr), corr.shape))
    shift = peak.astype(np.float64)
    for axis in (0, 1):
        n = corr.shape[axis]
        idx = [peak[0], peak[1]]
        c0 = corr[tuple(idx)]
        idx[axis] = (peak[axis] - 1) % n
        cm = corr[tuple(idx)]
        idx[axis] = (peak[axis] + 1) % n
        cp = corr[tuple(idx)]
        denom = cm - 2.0 * c0 + cp
        if abs(denom) > 1e-12:
            shift[axis] += 0.5 * (cm - cp) / denom
    for axis in (0, 1):
        n = corr.shape[axis]
        if shift[axis] > n / 2:
            shift[axis] -= n
    return shift


def apply_shifts(stack: np.ndarray, shifts: np.ndarray) -> np.ndarray:
    """Resample each image back by its shift (bilinear, zero fill)."""
    stack = np.asarray(stack, dtype=np.float64)
    shifts = np.asarray(shifts, dtype=np.float64)
    if shifts.shape != (len(stack), 2):
        raise ValueError(f"expected shifts ({len(stack)}, 2), got {shifts.shape}")
    out = np.empty_like(stack)
    for j, (img, s) in enumerate(zip(stack, shifts)):
        out[j] = scipy.ndimage.shift(img, -s, order=1, mode="constant", cval=0.0)
    return out.astype(np.float32)

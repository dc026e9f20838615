"""Scikit-learn style estimators wrapping the reconstruction pipelines.

``INRReconstructor`` and ``SIRTReconstructor`` fit on a projection stack
``X`` of shape (M, N, N) with per-image tilt angles passed as ``y``; the
transformers process stacks image by image and compose in sklearn
pipelines.
"""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import baseline, prep, training, validation
from .losses import LossConfig


class INRReconstructor(BaseEstimator):
    """Joint neural-field and pose reconstruction of a tilt series.

    Parameters mirror :class:`~inrtomo.training.ReconstructionConfig`; see
    that class for semantics. Fitted attributes: ``field_`` (the trained
    network), ``poses_`` (list of refined poses), ``history_`` (per-epoch
    records) and ``image_size_``.
    """

    def __init__(
        self,
        epochs: int = 150,
        hidden_layers: int = 4,
        hidden_dim: int = 512,
        omega0: float = 30.0,
        lr_weights: float = 8e-6,
        lr_pose: float = 5e-2,
        warmup_epochs: int = 10,
        batch_per_worker: int = 1024,
        workers: int = 1,
        optimize_pose: bool = True,
        alpha: float = 1e-4,
        beta: float = 0.07,
        pixel_loss: str = "smooth_l1",
        tv_subset_fraction: float = 0.1,
        ray_samples_initial: int | None = None,
        ray_samples_final: int | None = None,
        holdout_fraction: float = 0.2,
        early_stop: bool = False,
        patience: int = 10,
        seed: int = 0,
        verbose: int = 0,
    ):
        self.epochs = epochs
        self.hidden_layers = hidden_layers
        self.hidden_dim = hidden_dim
        self.omega0 = omega0
        self.lr_weights = lr_weights
        self.lr_pose = lr_pose
        self.warmup_epochs = warmup_epochs
        self.batch_per_worker = batch_per_worker
        self.workers = workers
        self.optimize_pose = optimize_pose
        self.alpha = alpha
        self.beta = beta
        self.pixel_loss = pixel_loss
        self.tv_subset_fraction = tv_subset_fraction
        self.ray_samples_initial = ray_samples_initial
        self.ray_samples_final = ray_samples_final
        self.holdout_fraction = holdout_fraction
        self.early_stop = early_stop
        self.patience = patience
        self.seed = seed
        self.verbose = verbose

    def _config(self) -> training.ReconstructionConfig:
        return training.ReconstructionConfig(
            epochs=self.epochs,
            lr_weights=self.lr_weights,
            lr_pose=self.lr_pose,
            warmup_epochs=self.warmup_epochs,
            batch_per_worker=self.batch_per_worker,
            workers=self.workers,
            optimize_pose=self.optimize_pose,
            holdout_fraction=self.holdout_fraction,
            early_stop=self.early_stop,
            patience=self.patience,
            ray_samples_initial=self.ray_samples_initial,
            ray_samples_final=self.ray_samples_final,
            hidden_layers=self.hidden_layers,
            hidden_dim=self.hidden_dim,
            omega0=self.omega0,
            seed=self.seed,
            loss=LossConfig(
                alpha=self.alpha,
                beta=self.beta,
                pixel_loss=self.pixel_loss,
                tv_subset_fraction=self.tv_subset_fraction,
            ),
            verbose=self.verbose,
        )

    def fit(self, X, y=None):
        """Fit the field and poses to a stack X (M, N, N) with angles y (deg)."""
        X = validation.check_tilt_stack(X)
        if y is None:
            raise ValueError("tilt angles (degrees) must be passed as y")
        angles = validation.check_angles(y, len(X))
        from .io import TiltSeries

        series = TiltSeries(images=X, angles_deg=angles)
        state = training.reconstruct(series, self._config())
        self.state_ = state
        self.field_ = state.field
        self.poses_ = state.poses.as_poses()
        self.history_ = state.history
        self.image_size_ = X.shape[1]
        self.n_images_ = len(X)
        return self

    def predict(self, X):
        """Evaluate the fitted field at (B, 3) coordinates in [-1, 1]^3."""
        check_is_fitted(self, "field_")
        coords = validation.check_coords(X)
        with torch.no_grad():
            return self.field_(torch.from_numpy(coords)).numpy()

    def export_volume(self, size: int | None = None) -> np.ndarray:
        """Sample the fitted field on a voxel grid (defaults to N^3)."""
        check_is_fitted(self, "field_")
        return training.export_volume(self.field_, size or self.image_size_)


class SIRTReconstructor(BaseEstimator):
    """SIRT baseline reconstruction with optional coarse pre-alignment.

    Fitted attribute ``volume_`` holds the (N, N, N) reconstruction;
    with ``align=True`` the stack is shifted onto its first image first
    and ``shifts_`` records the applied (row, col) displacements.
    """

    def __init__(
        self,
        iterations: int = 100,
        relaxation: float = 1.0,
        positivity: bool = True,
        align: bool = False,
    ):
        self.iterations = iterations
        self.relaxation = relaxation
        self.positivity = positivity
        self.align = align

    def fit(self, X, y=None):
        X = validation.check_tilt_stack(X)
        if y is None:
            raise ValueError("tilt angles (degrees) must be passed as y")
        angles = validation.check_angles(y, len(X))
        if self.align:
            self.shifts_ = baseline.cross_correlation_align(X)
            X = baseline.apply_shifts(X, self.shifts_)
        self.volume_ = baseline.sirt_reconstruct(
            X,
            np.deg2rad(angles),
            iterations=self.iterations,
            relaxation=self.relaxation,
            positivity=self.positivity,
        )
        self.image_size_ = X.shape[1]
        return self

    def export_volume(self) -> np.ndarray:
        check_is_fitted(self, "volume_")
        return self.volume_


class BackgroundSubtractor(TransformerMixin, BaseEstimator):
    """Per-image Bernstein background fit and subtraction."""

    def __init__(self, degree: tuple[int, int] = (3, 3), mask_quantile: float = 0.5):
        self.degree = degree
        self.mask_quantile = mask_quantile

    def fit(self, X, y=None):
        validation.check_tilt_stack(X)
        return self

    def transform(self, X):
        X = validation.check_tilt_stack(X)
        degree = self.degree
        if np.isscalar(degree):
            degree = (int(degree), int(degree))
        out = np.empty_like(X)
        for j, img in enumerate(X):
            mask = prep.make_background_mask(img, self.mask_quantile)
            model = prep.fit_background(img, mask=mask, degree=tuple(degree))
            out[j] = prep.subtract_background(img, model)
        return out


class FourierDownsampler(TransformerMixin, BaseEstimator):
    """Fourier-crop every image in a stack to ``size`` x ``size``."""

    def __init__(self, size: int = 64):
        self.size = size

    def fit(self, X, y=None):
        validation.check_tilt_stack(X)
        return self

    def transform(self, X):
        X = validation.check_tilt_stack(X)
        return prep.downsample_series(X, self.size)


class TiltSeriesAligner(TransformerMixin, BaseEstimator):
    """Coarse cross-correlation alignment onto the first image."""

    def fit(self, X, y=None):
        X = validation.check_tilt_stack(X)
        self.shifts_ = baseline.cross_correlation_align(X)
        return self

    def transform(self, X):
        check_is_fitted(self, "shifts_")
        X = validation.check_tilt_stack(X)
        if len(X) != len(self.shifts_):
            raise ValueError(f"stack has {len(X)} images, fitted shifts {len(self.shifts_)}")
        return baseline.apply_shifts(X, self.shifts_)

"""Tomographic reconstruction with implicit neural fields.

Jointly optimizes a coordinate network and per-projection poses against a
tilt series, next to a classical SIRT baseline, with a synthetic-experiment
kit (phantom, projector, dose, misalignment), preprocessing utilities and
SSIM-based evaluation.
"""

from .geometry import Pose, Ray, compose_rotation, build_ray, pixel_to_normalized
from .field import NeuralField, save_field, load_field
from .projection import PredictedBatch, integrate_ray, predict_pixels
from .losses import LossConfig, smooth_l1, pixel_loss, tv_loss, total_loss, ALPHA_PRESETS
from .training import ReconstructionConfig, TrainState, reconstruct, export_volume
from .baseline import radon, backproject, sirt_reconstruct, cross_correlation_align
from .simulate import make_phantom, project_volume, apply_dose, inject_misalignment, subsample_tilts
from .prep import BackgroundModel, fit_background, subtract_background, fourier_downsample
from .metrics import ssim, central_slab, slab_ssim
from .io import TiltSeries, read_tilt_series, write_tilt_series, read_volume, write_volume
from .estimators import (
    INRReconstructor,
    SIRTReconstructor,
    BackgroundSubtractor,
    FourierDownsampler,
    TiltSeriesAligner,
)

__version__ = "0.1.0"

__all__ = [
    "Pose",
    "Ray",
    "compose_rotation",
    "build_ray",
    "pixel_to_normalized",
    "NeuralField",
    "save_field",
    "load_field",
    "PredictedBatch",
    "integrate_ray",
    "predict_pixels",
    "LossConfig",
    "smooth_l1",
    "pixel_loss",
    "tv_loss",
    "total_loss",
    "ALPHA_PRESETS",
    "ReconstructionConfig",
    "TrainState",
    "reconstruct",
    "export_volume",
    "radon",
    "backproject",
    "sirt_reconstruct",
    "cross_correlation_align",
    "make_phantom",
    "project_volume",
    "apply_dose",
    "inject_misalignment",
    "subsample_tilts",
    "BackgroundModel",
    "fit_background",
    "subtract_background",
    "fourier_downsample",
    "ssim",
    "central_slab",
    "slab_ssim",
    "TiltSeries",
    "read_tilt_series",
    "write_tilt_series",
    "read_volume",
    "write_volume",
    "INRReconstructor",
    "SIRTReconstructor",
    "BackgroundSubtractor",
    "FourierDownsampler",
    "TiltSeriesAligner",
    "__version__",
]

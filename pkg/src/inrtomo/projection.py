"""Forward model: integrate the neural field along detector rays.

A pixel prediction is the field integrated along its clipped ray,
approximated by ``segment_length * sum(field(sample points))``. The whole
path is differentiable with respect to both field weights and pose
parameters; rays that miss the volume predict exactly 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .field import NeuralField
from .geometry import PoseBank, detector_coords, ray_bundle


@dataclass
class PredictedBatch:
    """Predictions for a batch of pixels.

    ``pixel_ids`` is an int64 (B, 2) array of (image index, flat pixel
    index); ``predicted`` and ``measured`` are aligned (B,) tensors
    (``measured`` may be None for pure prediction).
    """

    pixel_ids: np.ndarray
    predicted: torch.Tensor
    measured: torch.Tensor | None = None

    def __post_init__(self):
        if len(self.pixel_ids) != len(self.predicted):
            raise ValueError("pixel_ids and predicted lengths differ")
        if self.measured is not None and len(self.measured) != len(self.predicted):
            raise ValueError("predicted and measured lengths differ")


def integrate_ray(values, segment_length):
    """Quadrature along rays: segment_length * sum of sampled values.

    Works on torch tensors or numpy arrays; ``values`` has shape (..., S)
    and ``segment_length`` broadcasts over the leading dims. Zero samples
    integrate to 0.
    """
    if isinstance(values, torch.Tensor):
        if values.shape[-1] == 0:
            return torch.zeros_like(values.sum(dim=-1))
        return segment_length * values.sum(dim=-1)
    values = np.asarray(values)
    if values.shape[-1] == 0:
        return np.zeros(values.shape[:-1])
    return segment_length * values.sum(axis=-1)


def sample_field_along_rays(
    field: NeuralField,
    poses: PoseBank,
    image_idx: torch.Tensor,
    pixel_xy: torch.Tensor,
    sample_count: int,
):
    """Field values along the rays of the given pixels.

    Returns ``(values, segment_length, hit, coords)`` with values (B, S).
    """
    z1 = poses.z1.index_select(0, image_idx)
    z3 = poses.z3.index_select(0, image_idx)
    dx = poses.delta_x.index_select(0, image_idx)
    dy = poses.delta_y.index_select(0, image_idx)
    theta = poses.theta.index_select(0, image_idx)
    coords, seg, hit = ray_bundle(z1, theta, z3, dx, dy, pixel_xy, sample_count)
    values = field(coords.reshape(-1, 3)).reshape(coords.shape[0], sample_count)
    return values, seg, hit, coords


def predict_pixels(
    field: NeuralField,
    poses: PoseBank,
    pixel_ids: np.ndarray,
    n_pixels: int,
    sample_count: int,
    measured: torch.Tensor | None = None,
    pixel_table: torch.Tensor | None = None,
) -> PredictedBatch:
    """Predict detector pixel values for a batch of (image, pixel) ids.

    Parameters
    ----------
    field : NeuralField
    poses : PoseBank
    pixel_ids : int array of shape (B, 2)
        Rows of (image index, flat pixel index), flat index row-major.
    n_pixels : int
        Detector side length N.
    sample_count : int
        Samples per ray.
    measured : optional (B,) tensor carried through for loss computation.
    pixel_table : optional precomputed ``detector_coords(n_pixels)``.

    Returns
    -------
    PredictedBatch with nonnegative ``predicted``.
    """
    pixel_ids = np.asarray(pixel_ids, dtype=np.int64)
    if pixel_table is None:
        pixel_table = detector_coords(n_pixels, dtype=poses.theta.dtype)
    image_idx = torch.from_numpy(pixel_ids[:, 0])
    flat = torch.from_numpy(pixel_ids[:, 1])
    xy = pixel_table.index_select(0, flat)
    values, seg, hit, _ = sample_field_along_rays(field, poses, image_idx, xy, sample_count)
    predicted = torch.where(hit, integrate_ray(values, seg), torch.zeros_like(seg))
    return PredictedBatch(pixel_ids=pixel_ids, predicted=predicted, measured=measured)

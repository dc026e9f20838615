"""Training objective: pixel data term plus total-variation penalty.

L = L_pixel + alpha * L_TV. The pixel term is a smooth L1 (beta = 0.07) or
MSE over predicted-vs-measured pixel values; the TV term is the mean
Euclidean norm of the field gradient over a subset of ray sample
coordinates, pushing the field toward piecewise-smooth volumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .field import NeuralField

# TV weight presets by specimen class.
ALPHA_PRESETS = {
    "phantom": 1e-4,
    "supported-particles": 3e-4,
    "hyperbranched": 1e-5,
}

PIXEL_LOSSES = ("smooth_l1", "mse")


@dataclass
class LossConfig:
    """Objective hyperparameters.

    ``alpha`` weights the TV term, ``beta`` is the smooth-L1 transition
    point, ``pixel_loss`` picks the data term, ``tv_subset_fraction`` is the
    fraction of ray samples the TV term is evaluated on.
    """

    alpha: float = 1e-4
    beta: float = 0.07
    pixel_loss: str = "smooth_l1"
    tv_subset_fraction: float = 0.1

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.pixel_loss not in PIXEL_LOSSES:
            raise ValueError(f"pixel_loss must be one of {PIXEL_LOSSES}, got {self.pixel_loss!r}")
        if not 0.0 < self.tv_subset_fraction <= 1.0:
            raise ValueError("tv_subset_fraction must be in (0, 1]")
        if self.beta <= 0:
            raise ValueError("beta must be positive")


def smooth_l1(x: torch.Tensor, beta: float = 0.07) -> torch.Tensor:
    """Elementwise smooth L1: 0.5 x^2 / beta for |x| < beta, |x| - beta/2 above.

    Continuous with derivative clamped to [-1, 1].
    """
    ax = torch.abs(x)
    return torch.where(ax < beta, 0.5 * x * x / beta, ax - 0.5 * beta)


def pixel_loss(
    predicted: torch.Tensor,
    measured: torch.Tensor,
    kind: str = "smooth_l1",
    beta: float = 0.07,
) -> torch.Tensor:
    """Mean data-fit loss over a batch of pixels."""
    residual = measured - predicted
    if kind == "smooth_l1":
        return smooth_l1(residual, beta).mean()
    if kind == "mse":
        return (residual * residual).mean()
    raise ValueError(f"pixel_loss must be one of {PIXEL_LOSSES}, got {kind!r}")


def tv_loss(field: NeuralField, coords: torch.Tensor, create_graph: bool = False) -> torch.Tensor:
    """Mean norm of the field gradient over the given coordinates.

    ``coords`` (B, 3) are treated as fixed evaluation points (detached), so
    the penalty regularizes the field, not the poses. With ``create_graph``
    the value stays differentiable with respect to the field weights.
    """
    if coords.shape[0] == 0:
        return torch.zeros((), dtype=field.dtype)
    grads = field.input_gradient(coords, create_graph=create_graph)
    return grads.norm(dim=-1).mean()


def total_loss(pixel_term: torch.Tensor, tv_term: torch.Tensor, alpha: float) -> torch.Tensor:
    """L = L_pixel + alpha * L_TV."""
    return pixel_term + alpha * tv_term

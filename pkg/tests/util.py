"""Shared test helpers: finite-difference oracles and supervised field fits."""

from __future__ import annotations

import numpy as np
import torch

from inrtomo.field import NeuralField
from inrtomo.optim import Adam


def numeric_weight_grads(field: NeuralField, coords: torch.Tensor, upstream: torch.Tensor, h: float = 1e-5):
    """Central finite differences of sum(upstream * field(coords)) per parameter."""
    grads = []
    with torch.no_grad():
        for lin in field.linears:
            for param in (lin.weight, lin.bias):
                g = torch.zeros_like(param)
                flat = param.view(-1)
                gflat = g.view(-1)
                for i in range(flat.numel()):
                    orig = flat[i].item()
                    flat[i] = orig + h
                    hi = (field(coords) * upstream).sum().item()
                    flat[i] = orig - h
                    lo = (field(coords) * upstream).sum().item()
                    flat[i] = orig
                    gflat[i] = (hi - lo) / (2.0 * h)
                grads.append(g)
    return [(grads[2 * i], grads[2 * i + 1]) for i in range(len(field.linears))]


def numeric_input_grad(field: NeuralField, coords: torch.Tensor, h: float = 1e-6) -> torch.Tensor:
    """Central finite differences of the field along each input axis."""
    out = torch.zeros_like(coords)
    with torch.no_grad():
        for axis in range(3):
            step = torch.zeros_like(coords)
            step[:, axis] = h
            out[:, axis] = (field(coords + step) - field(coords - step)) / (2.0 * h)
    return out


def max_relative_error(approx, exact, floor: float = 1e-7) -> float:
    """Max |approx - exact| / (|exact| + floor), over tensors or arrays."""
    a = np.asarray(approx.detach() if torch.is_tensor(approx) else approx, dtype=np.float64)
    e = np.asarray(exact.detach() if torch.is_tensor(exact) else exact, dtype=np.float64)
    return float(np.max(np.abs(a - e) / (np.abs(e) + floor)))


def fit_field_to_function(
    field: NeuralField,
    target_fn,
    steps: int = 1500,
    batch: int = 512,
    lr: float = 3e-4,
    seed: int = 0,
) -> NeuralField:
    """Supervised coordinate regression: fit the field to target_fn(coords).

    Fast way to produce a genuinely trained, smooth field without running
    tomographic optimization.
    """
    rng = np.random.default_rng(seed)
    adam = Adam({"w": list(field.parameters())})
    for _ in range(steps):
        coords = torch.from_numpy(
            rng.uniform(-1.0, 1.0, size=(batch, 3)).astype(np.float32)
        ).to(field.dtype)
        target = target_fn(coords)
        loss = ((field(coords) - target) ** 2).mean()
        grads = torch.autograd.grad(loss, list(field.parameters()))
        adam.step({"w": list(grads)}, {"w": lr})
    return field

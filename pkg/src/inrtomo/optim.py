"""From-scratch Adam with named parameter groups, plus the training schedules.

Field weights and pose parameters train with separate learning rates, so
the optimizer keeps its groups by name and ``step`` takes one gradient list
and one learning rate per group. Schedules: linear warmup into cosine
annealing for both learning rates (scaled by sqrt(workers)), and a
geometrically doubling ray-sample count.
"""

from __future__ import annotations

import math

import numpy as np
import torch


class Adam:
    """Adam (beta1=0.9, beta2=0.999, eps=1e-8) over named parameter groups."""

    def __init__(
        self,
        groups: dict[str, list[torch.Tensor]],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.groups = {name: list(params) for name, params in groups.items()}
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.moments = {
            name: [(torch.zeros_like(p), torch.zeros_like(p)) for p in params]
            for name, params in self.groups.items()
        }

    @torch.no_grad()
    def step(self, grads: dict[str, list[torch.Tensor]], lr: dict[str, float]) -> None:
        """Apply one update; ``grads`` and ``lr`` are keyed like the groups.

        A group may be omitted from ``grads`` to freeze it for this step.
        Raises ValueError naming the group if any gradient is non-finite.
        """
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, group_grads in grads.items():
            params = self.groups[name]
            if len(group_grads) != len(params):
                raise ValueError(f"group {name!r}: {len(group_grads)} grads for {len(params)} params")
            for p, g, (m, v) in zip(params, group_grads, self.moments[name]):
                if not torch.isfinite(g).all():
                    raise ValueError(f"non-finite gradient in parameter group {name!r}")
                m.mul_(self.beta1).add_(g, alpha=1.0 - self.beta1)
                v.mul_(self.beta2).addcmul_(g, g, value=1.0 - self.beta2)
                denom = (v / bc2).sqrt_().add_(self.eps)
                p.addcdiv_(m / bc1, denom, value=-lr[name])

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Moment buffers and step count as numpy arrays, for checkpoints."""
        out = {"step_count": np.array([self.step_count], dtype=np.float32)}
        for name, moments in self.moments.items():
            for i, (m, v) in enumerate(moments):
                out[f"{name}.{i}.m"] = m.numpy().copy()
                out[f"{name}.{i}.v"] = v.numpy().copy()
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.step_count = int(arrays["step_count"][0])
        for name, moments in self.moments.items():
            for i, (m, v) in enumerate(moments):
                m.copy_(torch.as_tensor(arrays[f"{name}.{i}.m"]))
                v.copy_(torch.as_tensor(arrays[f"{name}.{i}.v"]))


def scale_lr(lr: float, workers: int) -> float:
    """Data-parallel learning-rate scaling: lr * sqrt(workers)."""
    if workers < 1:
        raise ValueError("workers must be at least 1")
    return lr * math.sqrt(workers)


def warmup_cosine(epoch: int, epochs: int, warmup_epochs: int) -> float:
    """Schedule shape in [0, 1]: linear warmup, then cosine annealing to 0.

    Reaches exactly 1 at ``epoch == warmup_epochs`` and 0 at the final
    epoch; the midpoint of the decay phase gives exactly 0.5.
    """
    if epoch < 0 or epoch >= epochs:
        raise ValueError(f"epoch {epoch} outside [0, {epochs})")
    if epoch < warmup_epochs:
        return (epoch + 1) / (warmup_epochs + 1)
    span = epochs - 1 - warmup_epochs
    if span <= 0:
        return 1.0 if epoch == warmup_epochs else 0.0
    return 0.5 * (1.0 + math.cos(math.pi * (epoch - warmup_epochs) / span))


def lr_schedule(epoch: int, config) -> tuple[float, float]:
    """Learning rates (weights, pose) for an epoch, sqrt(workers)-scaled."""
    shape = warmup_cosine(epoch, config.epochs, config.warmup_epochs)
    return (
        scale_lr(config.lr_weights, config.workers) * shape,
        scale_lr(config.lr_pose, config.workers) * shape,
    )


def ray_sample_schedule(epoch: int, config) -> int:
    """Samples per ray: doubles each epoch from the initial count, capped.

    min(initial * 2^epoch, final); both endpoints come from the config.
    """
    initial = config.ray_samples_initial
    final = config.ray_samples_final
    if initial < 2 or final < initial:
        raise ValueError("need 2 <= ray_samples_initial <= ray_samples_final")
    doubled = initial << min(epoch, 62)
    return int(min(doubled, final))

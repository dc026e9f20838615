"""Acquisition geometry: poses, detector coordinates and ray construction.

Conventions
-----------
The reconstruction volume lives in the cube [-1, 1]^3. The electron beam
travels along +z at zero tilt and the tilt axis is +y. A projection image is
an N x N grid in the (x, y) detector plane; pixel (row, col) maps to the
center of its cell, with columns along x and rows along y.

A pose carries the nominal tilt ``theta`` about y plus two learnable
rotations ``z1`` (before the tilt) and ``z3`` (after it) about the beam
axis, and in-plane shifts ``(delta_x, delta_y)`` applied to the detector
coordinates before any rotation. The ray through a pixel is the canonical
beam-parallel line through the shifted detector point, mapped by

    R = R_z(z3) @ R_y(theta) @ R_z(z1)

and clipped to the cube by the slab method. Sample points are equispaced
and endpoint-inclusive, so ``spacing * (sample_count - 1)`` equals the
chord length; the quadrature weight is ``segment_length = chord /
sample_count``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

# Entry/exit parameters are clamped to this range before sampling. Any real
# intersection with the cube has |t| <= sqrt(3) + |origin|; the clamp only
# reins in the ~1e12 sentinel values produced for rays that miss the cube,
# keeping downstream field evaluations finite.
_T_CLAMP = 3.0
_DIR_EPS = 1e-12


@dataclass
class Pose:
    """Projection pose: nominal tilt plus learnable corrections.

    Parameters
    ----------
    theta : float
        Nominal tilt angle about the y axis, radians. Fixed during
        optimization.
    z1 : float
        Rotation about the beam (z) axis applied before the tilt, radians.
    z3 : float
        Rotation about the beam axis applied after the tilt, radians.
    delta_x, delta_y : float
        In-plane detector shifts in normalized units (2 / n_pixels per
        pixel), applied before rotation.
    """

    theta: float
    z1: float = 0.0
    z3: float = 0.0
    delta_x: float = 0.0
    delta_y: float = 0.0


@dataclass
class Ray:
    """A sampled ray through the volume.

    ``points`` has shape (sample_count, 3). ``segment_length`` is the
    quadrature weight chord / sample_count; it is 0 for rays that miss the
    cube (sample_count 0).
    """

    origin: np.ndarray
    direction: np.ndarray
    points: np.ndarray
    sample_count: int
    segment_length: float


def rotation_about_z(angle: torch.Tensor) -> torch.Tensor:
    """Rotation matrices about the z axis for a batch of angles.

    Parameters
    ----------
    angle : torch.Tensor
        Angles in radians, any shape (...,).

    Returns
    -------
    torch.Tensor of shape (..., 3, 3).
    """
    c, s = torch.cos(angle), torch.sin(angle)
    zero = torch.zeros_like(c)
    one = torch.ones_like(c)
    rows = [
        torch.stack([c, -s, zero], dim=-1),
        torch.stack([s, c, zero], dim=-1),
        torch.stack([zero, zero, one], dim=-1),
    ]
    return torch.stack(rows, dim=-2)


def rotation_about_y(angle: torch.Tensor) -> torch.Tensor:
    """Rotation matrices about the y (tilt) axis, shape (..., 3, 3)."""
    c, s = torch.cos(angle), torch.sin(angle)
    zero = torch.zeros_like(c)
    one = torch.ones_like(c)
    rows = [
        torch.stack([c, zero, s], dim=-1),
        torch.stack([zero, one, zero], dim=-1),
        torch.stack([-s, zero, c], dim=-1),
    ]
    return torch.stack(rows, dim=-2)


def compose_rotation(z1, theta, z3) -> torch.Tensor:
    """Compose the full pose rotation R_z(z3) @ R_y(theta) @ R_z(z1).

    Accepts floats or tensors (broadcast along leading dims); returns
    (..., 3, 3). Float inputs are promoted to double precision.
    """
    z1, theta, z3 = _as_angle_tensors(z1, theta, z3)
    return rotation_about_z(z3) @ rotation_about_y(theta) @ rotation_about_z(z1)


def _as_angle_tensors(*angles):
    tensors = []
    for a in angles:
        if isinstance(a, torch.Tensor):
            tensors.append(a if a.dtype.is_floating_point else a.double())
        else:
            tensors.append(torch.as_tensor(a, dtype=torch.float64))
    dtype = torch.promote_types(
        torch.promote_types(tensors[0].dtype, tensors[1].dtype), tensors[2].dtype
    )
    return tuple(t.to(dtype) for t in tensors)


def pixel_to_normalized(row_col, n_pixels: int) -> np.ndarray:
    """Map integer pixel indices (row, col) to detector coordinates (x, y).

    Pixel centers tile [-1, 1]: column c maps to x = -1 + (2 c + 1) / N and
    row r to y = -1 + (2 r + 1) / N, so the center pixel of an odd grid maps
    to (0, 0).

    Parameters
    ----------
    row_col : array-like of shape (..., 2)
        Integer (row, col) pairs.
    n_pixels : int
        Detector side length N.

    Returns
    -------
    np.ndarray of shape (..., 2) with (x, y) coordinates.
    """
    rc = np.asarray(row_col, dtype=np.float64)
    x = -1.0 + (2.0 * rc[..., 1] + 1.0) / n_pixels
    y = -1.0 + (2.0 * rc[..., 0] + 1.0) / n_pixels
    return np.stack([x, y], axis=-1)


def normalized_to_pixel(xy, n_pixels: int) -> np.ndarray:
    """Inverse of :func:`pixel_to_normalized`; returns nearest (row, col)."""
    xy = np.asarray(xy, dtype=np.float64)
    col = np.rint((xy[..., 0] + 1.0) * n_pixels / 2.0 - 0.5).astype(np.int64)
    row = np.rint((xy[..., 1] + 1.0) * n_pixels / 2.0 - 0.5).astype(np.int64)
    return np.stack([row, col], axis=-1)


def detector_coords(n_pixels: int, dtype=torch.float32) -> torch.Tensor:
    """Detector-plane (x, y) centers for all N^2 pixels in row-major order."""
    idx = np.arange(n_pixels * n_pixels)
    rc = np.stack([idx // n_pixels, idx % n_pixels], axis=-1)
    return torch.as_tensor(pixel_to_normalized(rc, n_pixels), dtype=dtype)


def clip_to_cube(origin: torch.Tensor, direction: torch.Tensor):
    """Clip rays to [-1, 1]^3 by the slab method.

    Parameters
    ----------
    origin, direction : torch.Tensor of shape (..., 3)

    Returns
    -------
    (t_entry, t_exit, hit) where ``hit`` is a bool tensor; for missed rays
    t_exit is clamped to t_entry so the chord is 0. Entry/exit values are
    clamped to a safe range, which does not affect genuine intersections.
    """
    safe_dir = torch.where(
        direction.abs() < _DIR_EPS,
        torch.copysign(torch.full_like(direction, _DIR_EPS), direction),
        direction,
    )
    t_low = (-1.0 - origin) / safe_dir
    t_high = (1.0 - origin) / safe_dir
    t_entry = torch.minimum(t_low, t_high).amax(dim=-1)
    t_exit = torch.maximum(t_low, t_high).amin(dim=-1)
    hit = t_exit > t_entry
    t_entry = t_entry.clamp(-_T_CLAMP, _T_CLAMP)
    t_exit = torch.maximum(t_exit.clamp(-_T_CLAMP, _T_CLAMP), t_entry)
    return t_entry, t_exit, hit


def ray_bundle(
    z1: torch.Tensor,
    theta: torch.Tensor,
    z3: torch.Tensor,
    delta_x: torch.Tensor,
    delta_y: torch.Tensor,
    pixel_xy: torch.Tensor,
    sample_count: int,
):
    """Build sample coordinates for a batch of rays (differentiable).

    All pose arguments are per-ray tensors of shape (B,); ``pixel_xy`` is
    (B, 2) detector coordinates. Returns ``(coords, segment_length, hit)``
    with coords of shape (B, sample_count, 3) and segment_length (B,),
    already zeroed for rays that miss the cube.
    """
    if sample_count < 2:
        raise ValueError("sample_count must be at least 2")
    rot = rotation_about_z(z3) @ rotation_about_y(theta) @ rotation_about_z(z1)
    zero = torch.zeros_like(delta_x)
    plane = torch.stack([pixel_xy[:, 0] + delta_x, pixel_xy[:, 1] + delta_y, zero], dim=-1)
    origin = (rot @ plane.unsqueeze(-1)).squeeze(-1)
    direction = rot[..., :, 2]
    t_entry, t_exit, hit = clip_to_cube(origin, direction)
    chord = torch.where(hit, t_exit - t_entry, torch.zeros_like(t_entry))
    steps = torch.linspace(0.0, 1.0, sample_count, dtype=origin.dtype, device=origin.device)
    ts = t_entry.unsqueeze(-1) + steps * chord.unsqueeze(-1)
    coords = origin.unsqueeze(-2) + ts.unsqueeze(-1) * direction.unsqueeze(-2)
    segment_length = chord / sample_count
    return coords, segment_length, hit


def build_ray(pose: Pose, row_col, n_pixels: int, sample_count: int) -> Ray:
    """Build the sampled ray through one detector pixel (double precision).

    Parameters
    ----------
    pose : Pose
    row_col : (row, col) integer pair.
    n_pixels : int
        Detector side length.
    sample_count : int
        Number of equispaced, endpoint-inclusive samples along the chord.

    Returns
    -------
    Ray
        With unit ``direction``; a ray that misses the cube has
        ``sample_count`` 0, empty ``points`` and ``segment_length`` 0.
    """
    xy = pixel_to_normalized(np.asarray(row_col), n_pixels)
    to_t = lambda v: torch.tensor([float(v)], dtype=torch.float64)
    coords, seg, hit = ray_bundle(
        to_t(pose.z1),
        to_t(pose.theta),
        to_t(pose.z3),
        to_t(pose.delta_x),
        to_t(pose.delta_y),
        torch.tensor([[xy[0], xy[1]]], dtype=torch.float64),
        sample_count,
    )
    rot = compose_rotation(pose.z1, pose.theta, pose.z3).numpy()
    plane = np.array([xy[0] + pose.delta_x, xy[1] + pose.delta_y, 0.0])
    origin = rot @ plane
    direction = rot[:, 2]
    if not bool(hit[0]):
        return Ray(origin, direction, np.empty((0, 3)), 0, 0.0)
    return Ray(origin, direction, coords[0].numpy(), sample_count, float(seg[0]))


class PoseBank:
    """Per-image pose parameters as flat tensors, optionally learnable.

    ``theta`` is a fixed buffer; ``z1``, ``z3``, ``delta_x`` and ``delta_y``
    are leaf tensors with ``requires_grad`` set when the bank is trainable.
    """

    def __init__(self, theta_rad, trainable: bool = True, dtype=torch.float32):
        theta = torch.as_tensor(np.asarray(theta_rad, dtype=np.float64), dtype=dtype)
        self.theta = theta
        self.z1 = torch.zeros_like(theta, requires_grad=trainable)
        self.z3 = torch.zeros_like(theta, requires_grad=trainable)
        self.delta_x = torch.zeros_like(theta, requires_grad=trainable)
        self.delta_y = torch.zeros_like(theta, requires_grad=trainable)
        self.trainable = trainable

    @classmethod
    def from_poses(cls, poses, trainable: bool = True, dtype=torch.float32) -> "PoseBank":
        bank = cls([p.theta for p in poses], trainable=trainable, dtype=dtype)
        with torch.no_grad():
            bank.z1.copy_(torch.tensor([p.z1 for p in poses], dtype=dtype))
            bank.z3.copy_(torch.tensor([p.z3 for p in poses], dtype=dtype))
            bank.delta_x.copy_(torch.tensor([p.delta_x for p in poses], dtype=dtype))
            bank.delta_y.copy_(torch.tensor([p.delta_y for p in poses], dtype=dtype))
        return bank

    def __len__(self) -> int:
        return self.theta.shape[0]

    def parameters(self) -> list[torch.Tensor]:
        return [self.z1, self.z3, self.delta_x, self.delta_y]

    def as_poses(self) -> list[Pose]:
        arrays = self.state_arrays()
        out = []
        for j in range(len(self)):
            out.append(
                Pose(
                    theta=float(arrays["theta"][j]),
                    z1=float(arrays["z1"][j]),
                    z3=float(arrays["z3"][j]),
                    delta_x=float(arrays["delta_x"][j]),
                    delta_y=float(arrays["delta_y"][j]),
                )
            )
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        names = ("theta", "z1", "z3", "delta_x", "delta_y")
        return {k: getattr(self, k).detach().numpy().copy() for k in names}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        with torch.no_grad():
            for k in ("theta", "z1", "z3", "delta_x", "delta_y"):
                getattr(self, k).copy_(torch.as_tensor(arrays[k]))

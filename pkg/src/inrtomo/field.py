"""Sinusoidal coordinate network with a hyperbolic-sine input activation.

The field maps a 3-vector in [-1, 1]^3 to a nonnegative intensity. The
input layer uses sigma_i(x) = sin(omega0 * sinh(2 x)), hidden layers use
sigma_h(x) = sin(omega0 * x), and the scalar output passes through a
softplus so intensities stay positive. omega0 defaults to 30.

Weights are drawn from U(-1/n, 1/n) for the input layer (n = fan-in) and
U(-sqrt(6/n)/omega0, sqrt(6/n)/omega0) elsewhere; biases start at zero.
Initialization uses a numpy generator keyed by ``seed`` so identical seeds
give bit-identical networks.
"""

from __future__ import annotations


import numpy as np
import torch
from torch import nn

from . import io as _io

FIELD_FORMAT = "neural-field"
FIELD_VERSION = 1


def input_activation(x: torch.Tensor, omega0: float = 30.0) -> torch.Tensor:
    """sigma_i(x) = sin(omega0 * sinh(2 x)); zero at zero."""
    return torch.sin(omega0 * torch.sinh(2.0 * x))


def hidden_activation(x: torch.Tensor, omega0: float = 30.0) -> torch.Tensor:
    """sigma_h(x) = sin(omega0 * x); zero at zero."""
    return torch.sin(omega0 * x)


def stable_softplus(x: torch.Tensor) -> torch.Tensor:
    """ln(1 + e^x) computed as max(x, 0) + log1p(exp(-|x|)); no overflow."""
    return torch.clamp(x, min=0.0) + torch.log1p(torch.exp(-torch.abs(x)))


class NeuralField(nn.Module):
    """H-Siren intensity field phi: R^3 -> R_+.

    Parameters
    ----------
    hidden_layers : int
        Number of sine-activated hidden blocks after the input layer.
    hidden_dim : int
        Width of every sine layer.
    omega0 : float
        Frequency scale of the sine activations.
    seed : int
        Seed for the initialization generator.
    dtype : torch.dtype
        Parameter dtype; float32 for training, float64 for numeric tests.
    """

    def __init__(
        self,
        hidden_layers: int = 4,
        hidden_dim: int = 512,
        omega0: float = 30.0,
        seed: int = 0,
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        if hidden_layers < 1:
            raise ValueError("hidden_layers must be at least 1")
        if hidden_dim < 1:
            raise ValueError("hidden_dim must be at least 1")
        self.hidden_layers = hidden_layers
        self.hidden_dim = hidden_dim
        self.omega0 = float(omega0)
        self.seed = int(seed)
        dims = [3] + [hidden_dim] * (hidden_layers + 1) + [1]
        self.linears = nn.ModuleList(
            nn.Linear(dims[i], dims[i + 1]) for i in range(len(dims) - 1)
        )
        self._initialize(np.random.default_rng(seed))
        self.to(dtype)

    def _initialize(self, rng: np.random.Generator) -> None:
        with torch.no_grad():
            for i, lin in enumerate(self.linears):
                fan_in = lin.in_features
                if i == 0:
                    bound = 1.0 / fan_in
                else:
                    bound = np.sqrt(6.0 / fan_in) / self.omega0
                w = rng.uniform(-bound, bound, size=(lin.out_features, fan_in))
                lin.weight.copy_(torch.from_numpy(w))
                lin.bias.zero_()

    @property
    def dtype(self) -> torch.dtype:
        return self.linears[0].weight.dtype

    def forward(self, coords: torch.Tensor) -> torch.Tensor:
        """Evaluate the field at a batch of 3-vectors.

        Parameters
        ----------
        coords : torch.Tensor of shape (..., 3)
            Must be finite; raises ValueError otherwise.

        Returns
        -------
        torch.Tensor of shape (...,) with strictly positive intensities.
        """
        if coords.shape[-1] != 3:
            raise ValueError(f"expected coords with last dim 3, got {tuple(coords.shape)}")
        if not torch.isfinite(coords).all():
            raise ValueError("coords contain non-finite values")
        x = coords.to(self.dtype)
        x = input_activation(self.linears[0](x), self.omega0)
        for lin in self.linears[1:-1]:
            x = hidden_activation(lin(x), self.omega0)
        return stable_softplus(self.linears[-1](x)).squeeze(-1)

    def input_gradient(self, coords: torch.Tensor, create_graph: bool = False) -> torch.Tensor:
        """Gradient of the field with respect to its input coordinates.

        Returns a tensor shaped like ``coords``. With ``create_graph`` the
        result stays differentiable with respect to the weights (needed for
        gradient-penalty terms).
        """
        coords = coords.detach().to(self.dtype).requires_grad_(True)
        out = self.forward(coords)
        (grad,) = torch.autograd.grad(out.sum(), coords, create_graph=create_graph)
        return grad

    def weight_gradients(self, coords: torch.Tensor, upstream: torch.Tensor):
        """Backpropagate ``upstream`` through the field to all parameters.

        Parameters
        ----------
        coords : torch.Tensor of shape (B, 3)
        upstream : torch.Tensor of shape (B,)
            Cotangent for each output.

        Returns
        -------
        list of (weight_grad, bias_grad) tuples, one per linear layer, each
        shaped like the corresponding parameter.
        """
        out = self.forward(coords)
        params = [p for lin in self.linears for p in (lin.weight, lin.bias)]
        grads = torch.autograd.grad((out * upstream.to(out.dtype)).sum(), params)
        return [(grads[2 * i], grads[2 * i + 1]) for i in range(len(self.linears))]

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        """Parameters as float32 numpy arrays keyed layer0.weight, ..."""
        out = {}
        for i, lin in enumerate(self.linears):
            out[f"layer{i}.weight"] = lin.weight.detach().numpy().astype(np.float32)
            out[f"layer{i}.bias"] = lin.bias.detach().numpy().astype(np.float32)
        return out

    def load_parameter_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        with torch.no_grad():
            for i, lin in enumerate(self.linears):
                lin.weight.copy_(torch.as_tensor(arrays[f"layer{i}.weight"]))
                lin.bias.copy_(torch.as_tensor(arrays[f"layer{i}.bias"]))


def save_field(field: NeuralField, path) -> None:
    """Write a field checkpoint: JSON header line + float32 weight blob.

    The blob holds, per layer in order, the weight matrix (row-major) then
    the bias vector.
    """
    header = {
        "format": FIELD_FORMAT,
        "version": FIELD_VERSION,
        "hidden_layers": field.hidden_layers,
        "hidden_dim": field.hidden_dim,
        "omega0": field.omega0,
        "seed": field.seed,
    }
    arrays = field.parameter_arrays()
    names = [f"layer{i}.{part}" for i in range(len(field.linears)) for part in ("weight", "bias")]
    _io.write_blob_file(path, header, [arrays[n] for n in names])


def load_field(path, dtype: torch.dtype = torch.float32) -> NeuralField:
    """Read a checkpoint written by :func:`save_field`."""
    header, blob = _io.read_blob_file(path)
    if header.get("format") != FIELD_FORMAT:
        raise ValueError(f"not a field checkpoint: format {header.get('format')!r}")
    if header.get("version") != FIELD_VERSION:
        raise ValueError(f"unsupported field checkpoint version {header.get('version')!r}")
    field = NeuralField(
        hidden_layers=header["hidden_layers"],
        hidden_dim=header["hidden_dim"],
        omega0=header["omega0"],
        seed=header["seed"],
        dtype=torch.float32,
    )
    expected = 4 * sum(p.numel() for p in field.parameters())
    if len(blob) != expected:
        raise ValueError(f"field blob length mismatch: expected {expected} bytes, got {len(blob)}")
    arrays = {}
    offset = 0
    for i, lin in enumerate(field.linears):
        for part, shape in (("weight", tuple(lin.weight.shape)), ("bias", tuple(lin.bias.shape))):
            size = int(np.prod(shape)) * 4
            arrays[f"layer{i}.{part}"] = (
                np.frombuffer(blob[offset : offset + size], dtype="<f4").reshape(shape).copy()
            )
            offset += size
    field.load_parameter_arrays(arrays)
    return field.to(dtype)

"""Pinned loss values, the huber transition, and TV behavior."""

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from inrtomo.field import NeuralField
from inrtomo.losses import (
    ALPHA_PRESETS,
    LossConfig,
    pixel_loss,
    smooth_l1,
    total_loss,
    tv_loss,
)


class TestSmoothL1:
    def test_value_at_transition_point(self):
        # At |x| = beta both branches give beta/2: with beta 0.07 that is 0.035.
        val = smooth_l1(torch.tensor(0.07, dtype=torch.float64), beta=0.07)
        assert float(val) == pytest.approx(0.035, abs=1e-12)

    def test_linear_branch_at_one(self):
        val = smooth_l1(torch.tensor(1.0, dtype=torch.float64), beta=0.07)
        assert float(val) == pytest.approx(0.965, abs=1e-12)

    def test_quadratic_branch_value(self):
        # 0.5 * x^2 / beta at x = 0.035: 0.5 * 0.001225 / 0.07 = 0.00875
        val = smooth_l1(torch.tensor(0.035, dtype=torch.float64), beta=0.07)
        assert float(val) == pytest.approx(0.00875, abs=1e-12)

    def test_continuity_across_transition(self):
        eps = 1e-9
        below = float(smooth_l1(torch.tensor(0.07 - eps, dtype=torch.float64), beta=0.07))
        above = float(smooth_l1(torch.tensor(0.07 + eps, dtype=torch.float64), beta=0.07))
        assert abs(above - below) < 1e-8

    def test_derivative_clamped_to_unit(self):
        x = torch.linspace(-3, 3, 601, dtype=torch.float64, requires_grad=True)
        y = smooth_l1(x, beta=0.07).sum()
        (g,) = torch.autograd.grad(y, x)
        assert float(g.abs().max()) <= 1.0 + 1e-12
        # inside the quadratic region the slope is x / beta
        inside = x.detach().abs() < 0.07
        np.testing.assert_allclose(
            g[inside].numpy(), (x.detach()[inside] / 0.07).numpy(), atol=1e-12
        )

    def test_symmetric(self):
        x = torch.linspace(0, 2, 50, dtype=torch.float64)
        np.testing.assert_array_equal(smooth_l1(x, 0.07).numpy(), smooth_l1(-x, 0.07).numpy())


class TestPixelLoss:
    def test_mse_of_unit_residuals(self):
        predicted = torch.tensor([1.0, -1.0])
        measured = torch.zeros(2)
        assert float(pixel_loss(predicted, measured, "mse")) == pytest.approx(1.0)

    def test_smooth_l1_reduces_mean(self):
        predicted = torch.tensor([1.0, 0.0], dtype=torch.float64)
        measured = torch.zeros(2, dtype=torch.float64)
        # residuals 1 and 0 -> (0.965 + 0) / 2
        got = pixel_loss(predicted, measured, "smooth_l1", beta=0.07)
        assert float(got) == pytest.approx(0.4825, abs=1e-12)

    def test_unknown_name_rejected(self):
        with pytest.raises(ValueError, match="pixel_loss"):
            pixel_loss(torch.zeros(2), torch.zeros(2), "l3")


class TestTVLoss:
    def test_constant_field_has_zero_tv(self):
        class Flat(NeuralField):
            def __init__(self):
                super().__init__(hidden_layers=1, hidden_dim=4, seed=0)

            def forward(self, coords):
                return coords[..., 0] * 0.0 + 2.0

        coords = torch.rand(100, 3) * 2 - 1
        assert float(tv_loss(Flat(), coords)) == pytest.approx(0.0, abs=1e-12)

    def test_linear_ramp_has_unit_gradient_norm(self):
        class Ramp(NeuralField):
            def __init__(self):
                super().__init__(hidden_layers=1, hidden_dim=4, seed=0)

            def forward(self, coords):
                return coords[..., 2]

        coords = torch.rand(64, 3, dtype=torch.float64) * 2 - 1
        assert float(tv_loss(Ramp(), coords)) == pytest.approx(1.0, rel=1e-10)

    def test_empty_subset_is_zero_scalar(self):
        field = NeuralField(hidden_layers=1, hidden_dim=4, seed=0)
        out = tv_loss(field, torch.zeros(0, 3))
        assert out.shape == ()
        assert float(out) == 0.0


class TestTotalLoss:
    def test_pinned_example(self):
        # pixel part 0.5, tv part 2.0, alpha 1e-4 -> 0.5002
        val = total_loss(
            torch.tensor(0.5, dtype=torch.float64), torch.tensor(2.0, dtype=torch.float64),
            alpha=1e-4,
        )
        assert float(val) == pytest.approx(0.5002, abs=1e-12)

    def test_alpha_zero_drops_tv(self):
        val = total_loss(torch.tensor(0.0625), torch.tensor(100.0), alpha=0.0)
        assert float(val) == pytest.approx(0.0625)

    def test_composes_from_field_terms(self):
        class Ramp2(NeuralField):
            def __init__(self):
                super().__init__(hidden_layers=1, hidden_dim=4, seed=0)

            def forward(self, coords):
                return 2.0 * coords[..., 2]

        field = Ramp2()
        predicted = torch.tensor([0.0], dtype=torch.float64)
        measured = torch.tensor([1.0], dtype=torch.float64)
        coords = torch.rand(32, 3, dtype=torch.float64)
        pixel = pixel_loss(predicted, measured, "mse")
        tv = tv_loss(field, coords)
        val = total_loss(pixel, tv, alpha=1e-4)
        assert float(pixel) == pytest.approx(1.0)
        assert float(tv) == pytest.approx(2.0, rel=1e-9)
        assert float(val) == pytest.approx(1.0 + 2e-4, rel=1e-9)


class TestLossConfig:
    def test_alpha_presets(self):
        assert ALPHA_PRESETS["phantom"] == 1e-4
        assert ALPHA_PRESETS["supported-particles"] == 3e-4
        assert ALPHA_PRESETS["hyperbranched"] == 1e-5

    def test_defaults(self):
        cfg = LossConfig()
        assert cfg.alpha == 1e-4
        assert cfg.beta == 0.07
        assert cfg.pixel_loss == "smooth_l1"

    def test_invalid_values_rejected(self):
        with pytest.raises(ValueError):
            LossConfig(alpha=-1.0)
        with pytest.raises(ValueError):
            LossConfig(pixel_loss="nope")
        with pytest.raises(ValueError):
            LossConfig(tv_subset_fraction=1.5)


class TestSmoothL1Properties:
    @given(
        x=st.floats(min_value=-50.0, max_value=50.0, allow_nan=False),
        beta=st.floats(min_value=1e-3, max_value=5.0, allow_nan=False),
    )
    @settings(max_examples=200, deadline=None)
    def test_symmetric_nonnegative_bounded_by_absolute(self, x, beta):
        value = float(smooth_l1(torch.tensor(x, dtype=torch.float64), beta=beta))
        mirror = float(smooth_l1(torch.tensor(-x, dtype=torch.float64), beta=beta))
        assert value == mirror
        assert value >= 0.0
        assert value <= abs(x) + 1e-12

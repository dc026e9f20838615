"""Background fitting recovers planted surfaces; resampling preserves content."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inrtomo.prep import (
    BackgroundModel,
    bernstein_basis,
    downsample_series,
    evaluate_background,
    fit_background,
    fourier_downsample,
    fourier_upsample,
    make_background_mask,
    subtract_background,
)


def planted_background(n, coeffs):
    """Evaluate a Bernstein surface directly from its coefficient grid."""
    t = (np.arange(n) + 0.5) / n
    dy, dx = np.asarray(coeffs).shape[0] - 1, np.asarray(coeffs).shape[1] - 1
    bv = bernstein_basis(dy, t)
    bu = bernstein_basis(dx, t)
    return bv @ np.asarray(coeffs) @ bu.T


class TestBernsteinBasis:
    def test_partition_of_unity(self):
        t = np.linspace(0, 1, 17)
        for degree in (1, 2, 3):
            np.testing.assert_allclose(bernstein_basis(degree, t).sum(axis=1), 1.0, atol=1e-12)

    def test_degree_one_is_linear_interp(self):
        t = np.array([0.0, 0.25, 1.0])
        basis = bernstein_basis(1, t)
        np.testing.assert_allclose(basis, [[1.0, 0.0], [0.75, 0.25], [0.0, 1.0]], atol=1e-12)

    def test_endpoint_concentration(self):
        basis = bernstein_basis(3, np.array([0.0, 1.0]))
        np.testing.assert_allclose(basis[0], [1, 0, 0, 0], atol=1e-12)
        np.testing.assert_allclose(basis[1], [0, 0, 0, 1], atol=1e-12)


class TestFitBackground:
    def test_recovers_planted_coefficients(self):
        n = 48
        coeffs = np.array([[0.5, 0.8], [0.3, 1.1]])
        img = planted_background(n, coeffs).astype(np.float32)
        model = fit_background(img, degree=(1, 1))
        np.testing.assert_allclose(model.coefficients, coeffs, atol=1e-5)

    def test_full_mask_exact_on_polynomial(self):
        n = 32
        coeffs = np.array([[0.2, 0.6, 0.4], [0.1, 0.9, 0.5], [0.7, 0.3, 0.8]])
        img = planted_background(n, coeffs)
        model = fit_background(img, degree=(2, 2))
        fitted = evaluate_background(model, (n, n))
        np.testing.assert_allclose(fitted, img, atol=1e-6)

    def test_masked_fit_ignores_bright_foreground(self):
        n = 64
        rng = np.random.default_rng(0)
        coeffs = np.array([[1.0, 1.4], [0.8, 1.2]])
        img = planted_background(n, coeffs)
        # bright blob in the middle that the quantile mask should exclude
        img[24:40, 24:40] += 5.0
        mask = make_background_mask(img, quantile=0.5)
        assert not mask[32, 32]
        model = fit_background(img, mask=mask, degree=(1, 1))
        np.testing.assert_allclose(model.coefficients, coeffs, atol=1e-3)

    def test_tiny_mask_raises_rank_error(self):
        img = np.ones((16, 16), dtype=np.float32)
        mask = np.zeros((16, 16), dtype=bool)
        mask[3, 4] = True  # 1 point cannot fix 9 coefficients
        with pytest.raises(ValueError, match="degree"):
            fit_background(img, mask=mask, degree=(2, 2))

    def test_subtract_clips_at_zero(self):
        n = 32
        img = planted_background(n, np.array([[0.5, 0.5], [0.5, 0.5]])).astype(np.float32)
        out = subtract_background(img, fit_background(img, degree=(1, 1)))
        assert out.dtype == np.float32
        assert out.min() >= 0.0
        np.testing.assert_allclose(out, 0.0, atol=1e-5)


class TestFourierResample:
    def test_constant_image_preserved(self):
        img = np.full((32, 32), 3.0, dtype=np.float32)
        down = fourier_downsample(img, 16)
        np.testing.assert_allclose(down, 3.0, atol=1e-6)

    def test_single_low_frequency_mode_survives(self):
        n, m = 64, 32
        x = np.arange(n)
        img = np.cos(2 * np.pi * 3 * x / n)[None, :] * np.ones((n, 1))
        down = fourier_downsample(img.astype(np.float32), m)
        xm = np.arange(m)
        expected = np.cos(2 * np.pi * 3 * xm / m)[None, :] * np.ones((m, 1))
        np.testing.assert_allclose(down, expected, atol=1e-5)

    def test_mean_preserved(self):
        rng = np.random.default_rng(4)
        img = rng.random((40, 40)).astype(np.float32)
        down = fourier_downsample(img, 20)
        assert down.mean() == pytest.approx(img.mean(), abs=1e-6)

    def test_down_then_up_removes_only_high_frequencies(self):
        n, m = 32, 16
        x = np.arange(n)
        low = np.cos(2 * np.pi * 2 * x / n)[None, :] * np.ones((n, 1))
        round_trip = fourier_upsample(fourier_downsample(low.astype(np.float32), m), n)
        np.testing.assert_allclose(round_trip, low, atol=1e-5)

    def test_upsample_size_check(self):
        img = np.zeros((16, 16), dtype=np.float32)
        with pytest.raises(ValueError):
            fourier_downsample(img, 32)
        with pytest.raises(ValueError):
            fourier_upsample(img, 8)

    def test_series_downsample_applies_per_image(self):
        images = np.random.default_rng(0).random((3, 32, 32)).astype(np.float32)
        small = downsample_series(images, 16)
        assert small.shape == (3, 16, 16)
        np.testing.assert_allclose(small[1], fourier_downsample(images[1], 16), atol=1e-7)


class TestBackgroundFitProperties:
    @given(
        coeffs=st.lists(
            st.floats(min_value=-2.0, max_value=2.0, allow_nan=False),
            min_size=9,
            max_size=9,
        )
    )
    @settings(max_examples=25, deadline=None)
    def test_surfaces_in_span_fit_exactly(self, coeffs):
        # Any degree-(2, 2) Bernstein surface must be reproduced by its own fit.
        shape = (24, 17)
        planted = BackgroundModel(degree=(2, 2), coefficients=np.reshape(coeffs, (3, 3)))
        image = evaluate_background(planted, shape)
        fitted = fit_background(image, mask=np.ones(shape, dtype=bool), degree=(2, 2))
        assert np.allclose(evaluate_background(fitted, shape), image, atol=1e-8)

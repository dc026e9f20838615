"""Adam update math, learning-rate schedules and worker scaling."""

import math

import numpy as np
import pytest
import torch

from inrtomo.optim import Adam, lr_schedule, ray_sample_schedule, scale_lr, warmup_cosine
from inrtomo.training import ReconstructionConfig


class TestAdam:
    def test_first_step_moves_by_lr(self):
        # With bias correction the first Adam step is lr * sign(grad)
        # (up to the eps term).
        p = torch.zeros(4)
        adam = Adam({"w": [p]})
        g = torch.tensor([1.0, -2.0, 0.5, -0.1])
        adam.step({"w": [g]}, {"w": 1e-2})
        np.testing.assert_allclose(p.numpy(), -1e-2 * np.sign(g.numpy()), rtol=1e-6)

    def test_matches_torch_adam_over_many_steps(self):
        torch.manual_seed(0)
        init = torch.randn(6, dtype=torch.float64)
        mine = init.clone()
        theirs = init.clone().requires_grad_(True)
        adam = Adam({"w": [mine]})
        ref = torch.optim.Adam([theirs], lr=3e-3, betas=(0.9, 0.999), eps=1e-8)
        rng = np.random.default_rng(1)
        for _ in range(50):
            g = torch.from_numpy(rng.standard_normal(6))
            adam.step({"w": [g]}, {"w": 3e-3})
            theirs.grad = g.clone()
            ref.step()
        np.testing.assert_allclose(mine.numpy(), theirs.detach().numpy(), atol=1e-12)

    def test_omitted_group_stays_frozen(self):
        w = torch.zeros(2)
        p = torch.zeros(2)
        adam = Adam({"weights": [w], "pose": [p]})
        adam.step({"weights": [torch.ones(2)]}, {"weights": 1e-3})
        assert np.all(p.numpy() == 0.0)
        assert np.all(w.numpy() != 0.0)

    def test_per_group_learning_rates(self):
        a = torch.zeros(1, dtype=torch.float64)
        b = torch.zeros(1, dtype=torch.float64)
        adam = Adam({"x": [a], "y": [b]})
        g = torch.ones(1, dtype=torch.float64)
        adam.step({"x": [g], "y": [g.clone()]}, {"x": 1e-2, "y": 5e-2})
        assert float(a) == pytest.approx(-1e-2, rel=1e-6)
        assert float(b) == pytest.approx(-5e-2, rel=1e-6)

    def test_nonfinite_gradient_rejected(self):
        p = torch.zeros(2)
        adam = Adam({"pose": [p]})
        bad = torch.tensor([1.0, float("nan")])
        with pytest.raises(ValueError, match="pose"):
            adam.step({"pose": [bad]}, {"pose": 1e-3})

    def test_state_round_trip_continues_identically(self):
        torch.manual_seed(3)
        p1 = torch.randn(5, dtype=torch.float64)
        p2 = p1.clone()
        a1 = Adam({"w": [p1]})
        a2 = Adam({"w": [p2]})
        rng = np.random.default_rng(2)
        grads = [torch.from_numpy(rng.standard_normal(5)) for _ in range(6)]
        for g in grads[:3]:
            a1.step({"w": [g]}, {"w": 1e-2})
            a2.step({"w": [g]}, {"w": 1e-2})
        state = a1.state_arrays()
        a3 = Adam({"w": [p2]})
        a3.load_state_arrays(state)
        for g in grads[3:]:
            a1.step({"w": [g]}, {"w": 1e-2})
            a3.step({"w": [g]}, {"w": 1e-2})
        np.testing.assert_array_equal(p1.numpy(), p2.numpy())


class TestScaleLr:
    def test_sixteen_workers_pinned_value(self):
        assert scale_lr(8e-6, 16) == pytest.approx(3.2e-5, rel=1e-12)

    def test_four_workers_doubles(self):
        assert scale_lr(1e-3, 4) == pytest.approx(2e-3, rel=1e-12)

    def test_single_worker_identity(self):
        assert scale_lr(7e-4, 1) == 7e-4


class TestWarmupCosine:
    def test_reaches_one_at_end_of_warmup(self):
        assert warmup_cosine(10, 150, 10) == pytest.approx(1.0)

    def test_ramp_is_linear(self):
        for e in range(10):
            assert warmup_cosine(e, 150, 10) == pytest.approx((e + 1) / 11)

    def test_final_epoch_is_zero(self):
        assert warmup_cosine(149, 150, 10) == pytest.approx(0.0, abs=1e-12)

    def test_halfway_through_decay_is_half(self):
        # decay spans epochs 10..149; midpoint 79.5 -> check the two
        # neighbors bracket 0.5
        lo = warmup_cosine(80, 150, 10)
        hi = warmup_cosine(79, 150, 10)
        assert lo < 0.5 < hi
        assert warmup_cosine(79, 150, 10) + warmup_cosine(80, 150, 10) == pytest.approx(1.0, abs=0.01)

    def test_monotone_decay_after_warmup(self):
        vals = [warmup_cosine(e, 150, 10) for e in range(10, 150)]
        assert all(a > b for a, b in zip(vals, vals[1:]))


class TestLrSchedule:
    def test_scales_both_groups_by_workers(self):
        cfg = ReconstructionConfig(
            epochs=100, warmup_epochs=0, lr_weights=8e-6, lr_pose=5e-2, workers=4
        )
        lw, lp = lr_schedule(0, cfg)
        factor = warmup_cosine(0, 100, 0)
        assert lw == pytest.approx(2 * 8e-6 * factor, rel=1e-12)
        assert lp == pytest.approx(2 * 5e-2 * factor, rel=1e-12)

    def test_peak_at_end_of_warmup(self):
        cfg = ReconstructionConfig(epochs=50, warmup_epochs=5, lr_weights=1e-3, lr_pose=1e-2)
        lw, lp = lr_schedule(5, cfg)
        assert lw == pytest.approx(1e-3, rel=1e-12)
        assert lp == pytest.approx(1e-2, rel=1e-12)


class TestRaySampleSchedule:
    @staticmethod
    def _cfg(initial, final):
        return ReconstructionConfig(ray_samples_initial=initial, ray_samples_final=final)

    def test_doubles_each_epoch_until_cap(self):
        cfg = self._cfg(8, 64)
        assert [ray_sample_schedule(e, cfg) for e in range(6)] == [8, 16, 32, 64, 64, 64]

    def test_initial_equal_final_is_constant(self):
        cfg = self._cfg(32, 32)
        assert [ray_sample_schedule(e, cfg) for e in range(4)] == [32] * 4

    def test_validates_bounds(self):
        with pytest.raises(ValueError):
            ray_sample_schedule(0, self._cfg(1, 64))
        with pytest.raises(ValueError):
            ray_sample_schedule(0, self._cfg(128, 64))

    def test_no_overflow_at_large_epoch(self):
        assert ray_sample_schedule(10_000, self._cfg(8, 512)) == 512

    def test_defaults_resolve_to_detector_fractions(self):
        cfg = ReconstructionConfig().resolved(n_pixels=64)
        assert cfg.ray_samples_initial == 8
        assert cfg.ray_samples_final == 64

"""AdamW update rule and the warmup+cosine schedule."""

import math

import numpy as np
import pytest

from specmae.autodiff import Tensor
from specmae.model import ParamStore
from specmae.optim import AdamW, NonFiniteGradient, Schedule, lr_at


def store_with(values: dict) -> ParamStore:
    s = ParamStore()
    for k, v in values.items():
        s.add(k, np.asarray(v, dtype=np.float64))
    return s


class TestSchedule:
    def test_warmup_midpoint_is_half_peak(self):
        s = Schedule.from_steps(1000, 100, 1e-4, 1e-6)
        assert lr_at(s, 50) == pytest.approx(0.5e-4)

    def test_last_step_hits_final_lr_exactly(self):
        s = Schedule.from_steps(1000, 100, 1e-4, 1e-6)
        assert lr_at(s, 999) == 1e-6
        assert lr_at(s, 5000) == 1e-6

    def test_mid_cosine_closed_form(self):
        # t = 0.5: final + 0.5*(peak-final)*(1+cos(pi/2)) = 5.05e-5
        s = Schedule.from_steps(202, 1, 1e-4, 1e-6)
        mid = 1 + (201 - 1) // 2  # t = 0.5 exactly (last step = 201)
        got = lr_at(s, mid)
        want = 1e-6 + 0.5 * (1e-4 - 1e-6) * (1 + math.cos(math.pi * 0.5))
        assert got == pytest.approx(want, rel=1e-12)
        assert got == pytest.approx(5.05e-5, rel=1e-9)

    def test_continuity_at_warmup_junction(self):
        s = Schedule.from_steps(500, 100, 3e-4, 1e-6)
        # linear formula evaluated at the junction step equals the cosine one
        linear_limit = s.peak_lr * 100 / 100
        assert lr_at(s, 100) == pytest.approx(linear_limit)
        assert lr_at(s, 100) == pytest.approx(s.peak_lr)

    def test_epoch_based_construction(self):
        s = Schedule(warmup_epochs=5, total_epochs=60, peak_lr=1e-4, final_lr=1e-6,
                     steps_per_epoch=100)
        assert s.warmup_steps == 500 and s.total_steps == 6000
        assert lr_at(s, 250) == pytest.approx(0.5e-4)

    def test_validation(self):
        with pytest.raises(ValueError):
            Schedule.from_steps(10, 10, 1e-4, 1e-6)  # warmup == total
        with pytest.raises(ValueError):
            Schedule.from_steps(10, 1, 1e-6, 1e-4)  # final > peak
        s = Schedule.from_steps(10, 1, 1e-4, 1e-6)
        with pytest.raises(ValueError):
            lr_at(s, -1)


class TestAdamW:
    def test_first_step_hand_computed(self):
        # p=1, g=1, lr=1e-4, wd=1e-4:
        #   m_hat = v_hat = 1 -> p = 1 - 1e-8 - 1e-4/(1+1e-8) ~ 0.99990
        store = store_with({"p": [1.0]})
        opt = AdamW(store, weight_decay=1e-4)
        store["p"].grad = np.array([1.0])
        opt.step(1e-4)
        expected = 1.0 - 1e-4 * 1e-4 * 1.0 - 1e-4 * (1.0 / (1.0 + 1e-8))
        assert store["p"].data[0] == pytest.approx(expected, abs=1e-12)
        assert store["p"].data[0] == pytest.approx(0.99990, abs=1e-6)

    def test_zero_gradient_no_decay_is_identity(self):
        store = store_with({"p": [2.0, -3.0]})
        opt = AdamW(store, weight_decay=0.0)
        store["p"].grad = np.zeros(2)
        opt.step(1e-3)
        np.testing.assert_array_equal(store["p"].data, [2.0, -3.0])

    def test_matches_scalar_adam_oracle_on_quadratic(self):
        # minimize 0.5*x^2; oracle implements textbook Adam independently
        store = store_with({"x": [1.0]})
        opt = AdamW(store, weight_decay=0.0)
        x_ref, m, v = 1.0, 0.0, 0.0
        lr, b1, b2, eps = 1e-2, 0.9, 0.999, 1e-8
        for t in range(1, 11):
            g = float(store["x"].data[0])
            store["x"].grad = np.array([g])
            opt.step(lr)
            g_ref = x_ref
            m = b1 * m + (1 - b1) * g_ref
            v = b2 * v + (1 - b2) * g_ref * g_ref
            x_ref -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
            assert store["x"].data[0] == pytest.approx(x_ref, abs=1e-7)

    def test_nan_gradient_reports_tensor_name(self):
        store = store_with({"layer.w": [1.0]})
        opt = AdamW(store)
        store["layer.w"].grad = np.array([np.nan])
        with pytest.raises(NonFiniteGradient, match="layer.w"):
            opt.step(1e-3)

    def test_decoupled_decay_shrinks_without_gradient_direction(self):
        store = store_with({"p": [10.0]})
        opt = AdamW(store, weight_decay=0.1)
        store["p"].grad = np.array([0.0])
        opt.step(1e-2)
        assert store["p"].data[0] == pytest.approx(10.0 * (1 - 1e-2 * 0.1))

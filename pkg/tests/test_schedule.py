import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from frameslide.errors import ConfigError, ShapeError, StepRangeError
from frameslide.schedule import (
    NoiseSchedule,
    cfg_combine,
    ddim_step,
    ddim_timesteps,
    forward_jump,
    forward_step,
    make_linear_schedule,
    renoise_between,
    reverse_step,
)

from oracles import alpha_bars_loop, linear_betas


def test_two_step_schedule():
    s = NoiseSchedule(np.array([0.1, 0.2]))
    np.testing.assert_allclose(s.alpha_bars, [0.9, 0.72], rtol=0, atol=1e-15)
    assert s.T == 2
    assert s.alpha_bar(0) == 1.0


def test_single_step_schedule():
    s = make_linear_schedule(1, 0.5, 0.5)
    np.testing.assert_allclose(s.alpha_bars, [0.5])
    np.testing.assert_allclose(s.sigmas, [math.sqrt(0.5)])


def test_default_schedule_matches_product_loop():
    s = make_linear_schedule(50, 1e-4, 0.02)
    ref = alpha_bars_loop(linear_betas(50, 1e-4, 0.02))
    np.testing.assert_allclose(s.betas, linear_betas(50, 1e-4, 0.02), rtol=1e-14)
    np.testing.assert_allclose(s.alpha_bars, ref, rtol=1e-13)
    assert s.betas[0] == 1e-4 and s.betas[-1] == pytest.approx(0.02, abs=1e-17)


@pytest.mark.parametrize(
    "args, name",
    [((0, 1e-4, 0.02), "T"), ((10, 0.0, 0.02), "beta_start"), ((10, 1e-4, 1.0), "beta_end"),
     ((10, 0.3, 0.2), "beta_start")],
)
def test_invalid_schedule_names_parameter(args, name):
    with pytest.raises(ConfigError, match=name):
        make_linear_schedule(*args)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1e-5, 0.5), min_size=1, max_size=60))
def test_alpha_bar_recurrence(betas):
    s = NoiseSchedule(np.array(betas))
    ab = s.alpha_bars
    assert ab[0] == 1 - betas[0]
    for t in range(1, len(betas)):
        assert ab[t] == ab[t - 1] * (1 - betas[t])
    assert np.all(np.diff(ab) < 0)
    assert 0 < ab[-1] < 1
    np.testing.assert_array_equal(s.sigmas, np.sqrt(s.betas))


def test_schedule_is_immutable():
    s = make_linear_schedule()
    with pytest.raises(ValueError):
        s.betas[0] = 0.5


def test_schedule_csv_round_trip():
    s = make_linear_schedule(7, 1e-3, 0.1)
    text = s.to_csv()
    assert text.splitlines()[0] == "t,beta,alpha_bar,sigma"
    assert len(text.splitlines()) == 8
    back = NoiseSchedule.from_csv(text)
    np.testing.assert_array_equal(back.betas, s.betas)
    np.testing.assert_array_equal(back.alpha_bars, s.alpha_bars)


# -- forward process ------------------------------------------------------------

def test_forward_step_examples():
    s = NoiseSchedule(np.array([0.19]))
    z = np.array([[1.0, -2.0, 3.0]])
    np.testing.assert_allclose(forward_step(z, 1, np.zeros_like(z), s), 0.9 * z, rtol=1e-15)
    n = np.array([[0.5, 0.25, -1.0]])
    np.testing.assert_allclose(forward_step(np.zeros_like(n), 1, n, s), math.sqrt(0.19) * n, rtol=1e-15)


def test_forward_jump_examples():
    s = NoiseSchedule(np.array([0.1, 0.2]))
    z0 = np.array([1.0])
    np.testing.assert_allclose(forward_jump(z0, 2, np.zeros(1), s), math.sqrt(0.72) * z0)
    eps = np.array([0.3])
    np.testing.assert_allclose(forward_jump(np.zeros(1), 2, eps, s), math.sqrt(0.28) * eps)
    out = forward_jump(np.ones(1), 2, np.ones(1), s)[0]
    assert out == pytest.approx(math.sqrt(0.72) + math.sqrt(0.28), rel=1e-15)
    assert out == pytest.approx(1.37766, abs=5e-5)


def test_forward_step_range_and_shape_errors():
    s = make_linear_schedule(5)
    with pytest.raises(StepRangeError):
        forward_step(np.zeros(2), 0, np.zeros(2), s)
    with pytest.raises(StepRangeError):
        forward_jump(np.zeros(2), 6, np.zeros(2), s)
    with pytest.raises(ShapeError):
        forward_step(np.zeros(2), 1, np.zeros(3), s)


def test_composed_steps_match_jump_in_moments():
    s = make_linear_schedule(5, 0.05, 0.3)
    rng = np.random.default_rng(0)
    n = 20000
    z0 = 1.7
    z = np.full(n, z0)
    for t in range(1, 6):
        z = forward_step(z, t, rng.standard_normal(n), s)
    jump = forward_jump(np.full(n, z0), 5, rng.standard_normal(n), s)
    var = 1 - s.alpha_bar(5)
    se_mean = math.sqrt(var / n)
    se_var = var * math.sqrt(2 / (n - 1))
    assert abs(z.mean() - math.sqrt(s.alpha_bar(5)) * z0) < 3 * se_mean
    assert abs(jump.mean() - math.sqrt(s.alpha_bar(5)) * z0) < 3 * se_mean
    assert abs(z.var(ddof=1) - var) < 3 * se_var
    assert abs(jump.var(ddof=1) - var) < 3 * se_var


# -- reverse process --------------------------------------------------------------

def test_reverse_step_examples():
    s = NoiseSchedule(np.array([0.05, 0.19]))
    z = np.array([0.9, -0.45])
    np.testing.assert_allclose(reverse_step(z, np.zeros(2), 2, np.zeros(2), s), z / 0.9, rtol=1e-15)
    eps = np.array([0.2, 0.1])
    mean = (z - 0.19 / math.sqrt(1 - s.alpha_bar(2)) * eps) / math.sqrt(0.81)
    np.testing.assert_allclose(reverse_step(z, eps, 2, np.zeros(2), s), mean, rtol=1e-14)
    noise = np.array([1.0, -1.0])
    np.testing.assert_allclose(reverse_step(z, eps, 2, noise, s), mean + math.sqrt(0.19) * noise, rtol=1e-14)


def test_last_reverse_step_is_deterministic():
    s = make_linear_schedule(3)
    z = np.array([0.3, 0.1])
    eps = np.array([0.5, -0.2])
    a = reverse_step(z, eps, 1, np.array([10.0, 10.0]), s)
    b = reverse_step(z, eps, 1, np.zeros(2), s)
    np.testing.assert_array_equal(a, b)


def test_reverse_step_is_affine():
    s = make_linear_schedule(10)
    rng = np.random.default_rng(1)
    z1, z2, e1, e2 = rng.standard_normal((4, 3, 2))
    zero = np.zeros_like(z1)
    f = lambda z, e: reverse_step(z, e, 7, zero, s)
    lhs = f(0.3 * z1 + 0.7 * z2, 0.3 * e1 + 0.7 * e2)
    rhs = 0.3 * f(z1, e1) + 0.7 * f(z2, e2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-13)
    np.testing.assert_allclose(f(zero, zero), 0.0)


def test_reverse_step_range():
    with pytest.raises(StepRangeError):
        reverse_step(np.zeros(1), np.zeros(1), 4, np.zeros(1), make_linear_schedule(3))


# -- DDIM ---------------------------------------------------------------------------

def test_ddim_to_clean_is_x0_estimate():
    s = make_linear_schedule(20, 1e-3, 0.1)
    z = np.array([0.4, -1.2])
    eps = np.array([0.3, 0.9])
    ab = s.alpha_bar(12)
    x0 = (z - math.sqrt(1 - ab) * eps) / math.sqrt(ab)
    np.testing.assert_allclose(ddim_step(z, eps, 12, 0, s), x0, rtol=1e-14)


def test_ddim_zero_eps_scaling_and_round_trip():
    s = make_linear_schedule(20, 1e-3, 0.1)
    z = np.array([0.4, -1.2])
    out = ddim_step(z, np.zeros(2), 15, 6, s)
    ratio = math.sqrt(s.alpha_bar(6) / s.alpha_bar(15))
    np.testing.assert_allclose(out, ratio * z, rtol=1e-14)
    back = renoise_between(out, 6, 15, np.zeros(2), s)
    np.testing.assert_allclose(back, z, rtol=1e-14)


def test_ddim_rejects_non_monotone_pair():
    s = make_linear_schedule(10)
    with pytest.raises(StepRangeError):
        ddim_step(np.zeros(1), np.zeros(1), 3, 5, s)
    with pytest.raises(StepRangeError):
        ddim_step(np.zeros(1), np.zeros(1), 4, 4, s)


def test_ddim_timesteps():
    assert ddim_timesteps(50, 10) == [5, 10, 15, 20, 25, 30, 35, 40, 45, 50]
    assert ddim_timesteps(50, 50) == list(range(1, 51))
    assert ddim_timesteps(7, 3)[-1] == 7


def test_renoise_adjacent_is_forward_step():
    s = make_linear_schedule(10)
    z, n = np.array([0.5]), np.array([0.25])
    np.testing.assert_array_equal(renoise_between(z, 3, 4, n, s), forward_step(z, 4, n, s))


# -- guidance -----------------------------------------------------------------------

def test_cfg_combine_examples():
    rng = np.random.default_rng(2)
    u, c = rng.standard_normal((2, 4, 3))
    np.testing.assert_array_equal(cfg_combine(u, c, 1.0), c)
    np.testing.assert_array_equal(cfg_combine(u, c, 0.0), u)
    np.testing.assert_allclose(cfg_combine(np.zeros(3), np.ones(3), 9.0), 9.0)


def test_cfg_combine_errors():
    with pytest.raises(ShapeError):
        cfg_combine(np.zeros(2), np.zeros(3), 1.0)
    with pytest.raises(ConfigError):
        cfg_combine(np.zeros(2), np.zeros(2), -1.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 20), st.floats(0, 20), st.floats(-5, 5), st.integers(0, 2**31))
def test_cfg_combine_affine_and_shift_invariant(g1, g2, shift, seed):
    rng = np.random.default_rng(seed)
    u, c = rng.standard_normal((2, 6))
    mid = cfg_combine(u, c, 0.5 * (g1 + g2))
    np.testing.assert_allclose(mid, 0.5 * (cfg_combine(u, c, g1) + cfg_combine(u, c, g2)), atol=1e-10)
    shifted = cfg_combine(u + shift, c + shift, g1)
    np.testing.assert_allclose(shifted, cfg_combine(u, c, g1) + shift, atol=1e-9)
    assert np.argmax(shifted) == np.argmax(cfg_combine(u, c, g1)) or np.isclose(
        np.sort(shifted)[-1], np.sort(shifted)[-2])

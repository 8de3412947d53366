import math

import numpy as np
import pytest

from frameslide.errors import ConfigError
from frameslide.toyworld import (
    GaussianWorldSpec,
    MotionClass,
    ar1_conditional,
    gen_shape_video,
    joint_conditional,
    sample_ar1_clip,
    shape_centroids,
)


def lag1_corr(clips):
    a = clips[:, :-1].ravel()
    b = clips[:, 1:].ravel()
    return np.corrcoef(a, b)[0, 1], a.size


def test_ar1_independent_frames():
    world = GaussianWorldSpec((1, 1, 1), rho=0.0)
    clips = sample_ar1_clip(world, 2, seed=0, batch=(10000,))
    r, n = lag1_corr(clips)
    assert abs(r) < 3 / math.sqrt(n)


def test_ar1_strong_correlation():
    world = GaussianWorldSpec((1, 1, 1), rho=0.99)
    clips = sample_ar1_clip(world, 2, seed=1, batch=(10000,))
    r, n = lag1_corr(clips)
    se = (1 - 0.99 ** 2) / math.sqrt(n)
    assert abs(r - 0.99) < 3 * se


def test_ar1_seeded():
    world = GaussianWorldSpec()
    np.testing.assert_array_equal(sample_ar1_clip(world, 4, seed=5), sample_ar1_clip(world, 4, seed=5))
    assert sample_ar1_clip(world, 4, seed=5).shape == (4, 8, 8, 3)


def test_ar1_stationary_marginals():
    world = GaussianWorldSpec((2, 2, 1), rho=0.8, sigma2=0.5, mu=0.3)
    clips = sample_ar1_clip(world, 6, seed=2, batch=(5000,))
    n = 5000 * 4
    for k in range(6):
        frame = clips[:, k].ravel()
        assert abs(frame.mean() - 0.3) < 3 * math.sqrt(0.5 / n)
        assert abs(frame.var() - 0.5) < 3 * 0.5 * math.sqrt(2 / n)


def test_ar1_conditional_examples():
    world = GaussianWorldSpec((1, 1, 1), rho=0.0, sigma2=2.0, mu=0.5)
    mean, var = ar1_conditional(world, np.full((3, 1, 1, 1), 7.0))
    assert mean.item() == 0.5 and var.item() == 2.0
    world = GaussianWorldSpec((1, 1, 1), rho=0.9)
    mean, var = ar1_conditional(world, np.ones((1, 1, 1, 1)))
    assert mean.item() == pytest.approx(0.9)
    assert var.item() == pytest.approx(0.19)


def test_repeated_observations_add_nothing():
    world = GaussianWorldSpec((2, 2, 3), rho=0.9)
    z = np.random.default_rng(0).standard_normal((2, 2, 3))
    obs = np.stack([z] * 4)
    m_dense, v_dense = joint_conditional(world, obs)
    m_markov, v_markov = ar1_conditional(world, obs)
    np.testing.assert_allclose(m_dense, m_markov, atol=1e-10)
    np.testing.assert_allclose(v_dense, v_markov, atol=1e-10)


@pytest.mark.parametrize("rho", [0.0, 0.5, 0.95, -0.3])
def test_markov_property(rho):
    world = GaussianWorldSpec((3, 1, 2), rho=rho, sigma2=1.7, mu=-0.2)
    obs = sample_ar1_clip(world, 5, seed=3)
    m_dense, v_dense = joint_conditional(world, obs)
    m_markov, v_markov = ar1_conditional(world, obs)
    np.testing.assert_allclose(m_dense, m_markov, atol=1e-10)
    np.testing.assert_allclose(v_dense, v_markov, atol=1e-10)


def test_world_validation_and_parse():
    with pytest.raises(ConfigError):
        GaussianWorldSpec(rho=1.0)
    with pytest.raises(ConfigError):
        GaussianWorldSpec(sigma2=0.0)
    w = GaussianWorldSpec.parse("rho=0.5, sigma2=0.25,mu=0.1", frame_shape=(4, 4, 3))
    assert (w.rho, w.sigma2, w.mu, w.frame_shape) == (0.5, 0.25, 0.1, (4, 4, 3))
    with pytest.raises(ConfigError):
        GaussianWorldSpec.parse("gamma=3")
    cov = w.frame_covariance(5)
    assert np.all(np.linalg.eigvalsh(cov) > 0)


# -- moving shapes -----------------------------------------------------------------

def test_motion_classes_are_stable():
    assert [int(c) for c in MotionClass] == [0, 1, 2, 3]
    assert [c.display_name for c in MotionClass] == ["right", "left", "up", "down"]


def test_right_mover_without_wall_moves_right():
    for seed in range(30):
        video, label, _ = gen_shape_video(MotionClass.RIGHT, seed=seed, frames=8)
        assert label == 0
        cx = shape_centroids(video)[:, 1]
        assert np.all(np.diff(cx) > 0), seed


def test_values_and_seeds():
    a, _, _ = gen_shape_video(MotionClass.UP, seed=1)
    b, _, _ = gen_shape_video(MotionClass.UP, seed=2)
    assert a.shape == (16, 32, 32, 3)
    assert a.min() >= 0 and a.max() <= 1
    assert not np.array_equal(a[0], b[0])
    np.testing.assert_array_equal(a, gen_shape_video(MotionClass.UP, seed=1)[0])


def test_degenerate_geometry():
    with pytest.raises(ConfigError):
        gen_shape_video(MotionClass.LEFT, seed=0, size=8)
    with pytest.raises(ConfigError):
        gen_shape_video(MotionClass.LEFT, seed=0, frames=1)


def test_corpus_displacement_sign_matches_class():
    expected = {0: (1, 1), 1: (1, -1), 2: (0, -1), 3: (0, 1)}
    checked = 0
    for i in range(200):
        video, label, _ = gen_shape_video(i % 4, seed=1000 + i)
        axis, sign = expected[label]
        c = shape_centroids(video)[:, axis]
        steps = np.diff(c)
        # a segment is non-reflecting while the step keeps its first sign
        first_turn = np.argmax(np.sign(steps) != np.sign(steps[0])) or len(steps)
        assert np.all(np.sign(steps[:first_turn]) == sign), i
        checked += first_turn
    assert checked > 200 * 8

"""Jammer-correlated stacked noise: construction, scaling, sampling."""

import numpy as np
import pytest

from difnet.noise import (
    JammerSpec,
    StackedCovariance,
    sample_correlated,
    stacked_covariance,
    time_varying_scale,
)
from difnet.scenarios import builtin_scenario


@pytest.fixture(scope="module")
def linear_setup():
    scn = builtin_scenario("linear-cv")
    return scn.jammer, scn.sensors


def test_zero_betas_block_diagonal(linear_setup):
    jammer, sensors = linear_setup
    zero = JammerSpec(jammer.r0, {i: 0.0 for i in jammer.betas}, jammer.selectors)
    stacked = stacked_covariance(zero, sensors)
    for i in stacked.sensor_ids:
        for j in stacked.sensor_ids:
            if i == j:
                own = next(s for s in sensors if s.sensor_id == i).noise_cov
                np.testing.assert_allclose(stacked.block(i, i), own)
            else:
                np.testing.assert_allclose(stacked.block(i, j), 0.0)


def test_linear_scenario_diagonal_block(linear_setup):
    stacked = stacked_covariance(*linear_setup)
    np.testing.assert_allclose(
        stacked.block(1, 1), np.diag([12500.0, 125.0, 12500.0, 125.0])
    )


def test_linear_scenario_cross_block(linear_setup):
    stacked = stacked_covariance(*linear_setup)
    np.testing.assert_allclose(
        stacked.block(1, 2), 0.25 * np.diag([10000.0, 100.0, 10000.0, 100.0])
    )


def test_off_diagonal_vanishes_with_single_zero_beta(linear_setup):
    jammer, sensors = linear_setup
    betas = dict(jammer.betas)
    betas[2] = 0.0
    stacked = stacked_covariance(JammerSpec(jammer.r0, betas, jammer.selectors), sensors)
    for j in (1, 3, 4):
        np.testing.assert_allclose(stacked.block(2, j), 0.0)
        np.testing.assert_allclose(stacked.block(j, 2), 0.0)


def test_whole_matrix_symmetric_pd(linear_setup):
    stacked = stacked_covariance(*linear_setup)
    m = stacked.matrix
    np.testing.assert_allclose(m, m.T)
    np.linalg.cholesky(m)  # PD certificate


def test_indefinite_rejected():
    with pytest.raises(ValueError, match="indefinite"):
        StackedCovariance({1: 1, 2: 1}, np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_time_varying_endpoints(linear_setup):
    base = stacked_covariance(*linear_setup)
    np.testing.assert_allclose(
        time_varying_scale(base, 3, 0.0, 50).matrix, base.matrix
    )
    np.testing.assert_allclose(
        time_varying_scale(base, 25, 0.5, 50).matrix, 0.5 * base.matrix
    )
    np.testing.assert_allclose(
        time_varying_scale(base, 0, 0.5, 50).matrix, 1.5 * base.matrix
    )


def test_time_varying_validation(linear_setup):
    base = stacked_covariance(*linear_setup)
    with pytest.raises(ValueError):
        time_varying_scale(base, 0, 1.0, 50)
    with pytest.raises(ValueError):
        time_varying_scale(base, 0, 0.5, 0)


def test_sampling_deterministic(linear_setup):
    stacked = stacked_covariance(*linear_setup)
    a = sample_correlated(stacked, np.random.default_rng(5))
    b = sample_correlated(stacked, np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)


def test_sampling_zero_covariance():
    zero = StackedCovariance({1: 2}, np.zeros((2, 2)))
    np.testing.assert_array_equal(
        sample_correlated(zero, np.random.default_rng(0)), np.zeros(2)
    )


def test_sampling_tiny_scale_limit(linear_setup):
    stacked = stacked_covariance(*linear_setup).scaled(1e-30)
    draw = sample_correlated(stacked, np.random.default_rng(0))
    assert np.max(np.abs(draw)) < 1e-10


def test_sample_covariance_converges(linear_setup):
    stacked = stacked_covariance(*linear_setup)
    rng = np.random.default_rng(123)
    n = 100_000
    draws = np.stack([sample_correlated(stacked, rng) for _ in range(n)])
    emp = draws.T @ draws / n
    rel = np.linalg.norm(emp - stacked.matrix) / np.linalg.norm(stacked.matrix)
    assert rel < 0.05

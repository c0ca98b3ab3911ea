import math

import numpy as np
import pytest
from scipy import stats

from fpdTool.core.channel_model import ChannelParams, Rician, rician_cdf_db, shadowing_cov
from fpdTool.core.errors import RejectionSamplingError, SingularCovarianceError
from fpdTool.core.fpd_multipath import first_passage_pmf
from fpdTool.core.fpd_volterra import VolterraGrid, solve_upcrossing_fpd
from fpdTool.core.mc_oracle import (EmpiricalFpd, McConfig, empirical_fpd, ks_distance, make_rng,
                                    sample_multipath_db, sample_shadowing, sample_shadowing_ar1)
from fpdTool.core.path_geometry import straight_path


def test_rng_is_reproducible():
    a = make_rng(7, 3).standard_normal(5)
    b = make_rng(7, 3).standard_normal(5)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, make_rng(7, 4).standard_normal(5))


def test_exact_shadowing_covariance(sf_params):
    points = np.array([[0.0, 0.0], [5.0, 0.0], [5.0, 12.0]])
    draws = sample_shadowing(points, sf_params, seed=11, size=40_000)
    assert draws.shape == (40_000, 3)
    expected = shadowing_cov(sf_params, np.linalg.norm(points[:, None] - points[None, :], axis=2))
    np.testing.assert_allclose(np.cov(draws, rowvar=False), expected, atol=0.35)


def test_coincident_points_are_refused(sf_params):
    with pytest.raises(SingularCovarianceError):
        sample_shadowing(np.array([[0.0, 0.0], [0.0, 0.0]]), sf_params, seed=1)


def test_ar1_shadowing_statistics(sf_params):
    draws = sample_shadowing_ar1(30, 1.0, sf_params, seed=5, size=40_000)
    assert np.var(draws[:, -1]) == pytest.approx(8.41, abs=0.35)
    lag1 = np.corrcoef(draws[:, 10], draws[:, 11])[0, 1]
    assert lag1 == pytest.approx(math.exp(-1.0 / 12.92), abs=0.02)


def test_exact_and_ar1_samplers_agree_on_a_line(sf_params):
    path = straight_path(550.0, 0.0, 5.0, 0.5)
    exact = sample_shadowing(path, sf_params, seed=2, size=5000)
    ar1 = sample_shadowing_ar1(path.n_points, 0.5, sf_params, seed=3, size=5000)
    assert stats.ks_2samp(exact[:, -1], ar1[:, -1]).pvalue > 1e-3
    assert stats.ks_2samp(exact[:, -1] - exact[:, 0], ar1[:, -1] - ar1[:, 0]).pvalue > 1e-3


def test_rician_power_has_unit_mean():
    power = np.power(10.0, sample_multipath_db(5.0, 200_000, seed=9) / 10.0)
    assert power.mean() == pytest.approx(1.0, abs=0.01)
    assert np.std(sample_multipath_db(1e6, 10_000, seed=9)) < 0.05
    with pytest.raises(ValueError):
        sample_multipath_db(-1.0, 10, seed=9)


def test_multipath_draws_follow_the_rician_cdf():
    draws = np.sort(sample_multipath_db(1.59, 200_000, seed=13))
    levels = np.linspace(-20.0, 8.0, 57)
    empirical = np.searchsorted(draws, levels, side='right') / draws.size
    np.testing.assert_allclose(empirical, rician_cdf_db(1.59, levels, method="ncx2"), atol=0.005)
    at_mean = np.count_nonzero(draws <= 0.0) / draws.size
    assert at_mean == pytest.approx(rician_cdf_db(1.59, 0.0), abs=0.005)


def test_mc_config_validation():
    with pytest.raises(ValueError):
        McConfig(trials=0, seed=1, horizon_steps=10)
    with pytest.raises(ValueError):
        McConfig(trials=10, seed=1, horizon_steps=10, epsilon=-0.1)
    with pytest.raises(ValueError):
        McConfig(trials=10, seed=1, horizon_steps=10, max_workers=0)
    with pytest.raises(ValueError):
        McConfig(trials=10, seed=1, horizon_steps=10, monitoring="continuous")


def test_empirical_fpd_statistics():
    result = EmpiricalFpd(np.array([1, 2, -1, 2]), 0.5, 4)
    assert result.trials == 4
    assert result.censored_count == 1
    np.testing.assert_allclose(result.crossing_distances, [0.5, 1.0, 1.0])
    np.testing.assert_allclose(result.cdf([0.25, 0.5, 1.0, 2.0]), [0.0, 0.25, 0.75, 0.75])
    assert list(result.rows()) == [(0, 1, 0.5, 0), (1, 2, 1.0, 0), (2, "", "", 1), (3, 2, 1.0, 0)]
    mean, censored = result.expected_distance()
    assert mean == pytest.approx((0.5 + 1.0 + 2.0 + 1.0) / 4)
    assert censored == pytest.approx(0.25)


def test_result_does_not_depend_on_worker_count(sf_params):
    path = straight_path(550.0, 0.0, 3.0, 0.03)
    base = dict(trials=3000, seed=42, horizon_steps=100, epsilon=0.1, chunk_trials=500)
    serial = empirical_fpd(path, sf_params, McConfig(max_workers=1, **base))
    parallel = empirical_fpd(path, sf_params, McConfig(max_workers=3, **base))
    np.testing.assert_array_equal(serial.trial_steps, parallel.trial_steps)
    assert serial.trials == 3000


def test_horizon_longer_than_path_is_refused(sf_params):
    path = straight_path(550.0, 0.0, 1.0, 0.1)
    with pytest.raises(ValueError):
        empirical_fpd(path, sf_params, McConfig(trials=10, seed=1, horizon_steps=20))


def test_unreachable_start_condition():
    path = straight_path(550.0, 0.0, 1.0, 0.1)
    p = ChannelParams(k_db=100.0)
    with pytest.raises(RejectionSamplingError):
        empirical_fpd(path, p, McConfig(trials=100, seed=1, horizon_steps=10, epsilon=0.1, chunk_trials=100))


def test_monte_carlo_matches_volterra_on_a_straight_path(sf_params, straight):
    n_steps, delta_d = 600, 0.03
    path = straight_path(550.0, 0.0, n_steps * delta_d, delta_d)
    density = solve_upcrossing_fpd(sf_params, straight, 0.1, VolterraGrid(n_steps * delta_d, n_steps))
    cfg = McConfig(trials=20_000, seed=20240501, horizon_steps=n_steps, epsilon=0.1, max_workers=2,
                   monitoring="bridge")
    assert ks_distance(empirical_fpd(path, sf_params, cfg), density) < 0.035


def test_monte_carlo_matches_multipath_recursion(straight):
    p = ChannelParams(multipath=Rician(5.0))
    n_steps, delta_d = 200, 0.1
    path = straight_path(550.0, 0.0, n_steps * delta_d, delta_d)
    pmf = first_passage_pmf(p, straight, n_steps, delta_d)
    cfg = McConfig(trials=20_000, seed=7, horizon_steps=n_steps, epsilon=0.0, max_workers=2)
    assert ks_distance(empirical_fpd(path, p, cfg), pmf) < 0.025


def test_bridge_crossings_only_bring_connection_forward(sf_params):
    path = straight_path(550.0, 0.0, 6.0, 0.1)
    base = dict(trials=4000, seed=19, horizon_steps=60, epsilon=0.1, chunk_trials=1000)
    grid_only = empirical_fpd(path, sf_params, McConfig(monitoring="discrete", **base)).trial_steps
    bridged = empirical_fpd(path, sf_params, McConfig(monitoring="bridge", **base)).trial_steps
    never = base["horizon_steps"] + 1
    grid_only = np.where(grid_only < 0, never, grid_only)
    bridged = np.where(bridged < 0, never, bridged)
    assert np.all(bridged <= grid_only)
    assert np.count_nonzero(bridged < grid_only) > 0


def test_bridge_monitoring_needs_no_multipath():
    path = straight_path(550.0, 0.0, 1.0, 0.1)
    p = ChannelParams(multipath=Rician(1.59))
    with pytest.raises(ValueError):
        empirical_fpd(path, p, McConfig(trials=10, seed=1, horizon_steps=10, monitoring="bridge"))

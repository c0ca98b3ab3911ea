"""
Long-running agreement checks over a 60 m horizon (pytest -m slow)
"""
import math
from pathlib import Path

import numpy as np
import pytest

from fpdTool.cli.cmd_sweep import EXPECTED_TREND
from fpdTool.core.channel_model import Rician
from fpdTool.core.fpd_multipath import first_passage_pmf
from fpdTool.core.fpd_volterra import VolterraGrid, solve_upcrossing_fpd
from fpdTool.core.mc_oracle import McConfig, empirical_fpd, ks_distance
from fpdTool.core.path_geometry import straight_path
from fpdTool.core.run_config import RunConfig, SweepSpec

pytestmark = pytest.mark.slow

DELTA_D = 0.03
N_STEPS = 2000
D_MAX = N_STEPS * DELTA_D
EPS = 0.1
TRIALS = 100_000
TREND_CONFIG = Path(__file__).resolve().parent.parent / "fpdTool" / "config" / "sf_trend_straight.json"


def _mc(path, p, monitoring, seed=20240501, trials=TRIALS):
    cfg = McConfig(trials=trials, seed=seed, horizon_steps=N_STEPS, epsilon=EPS, max_workers=4,
                   monitoring=monitoring)
    return empirical_fpd(path, p, cfg)


def _straight_path():
    return straight_path(550.0, 0.0, D_MAX, DELTA_D)


def test_straight_path_volterra_vs_monte_carlo(sf_params, straight):
    density = solve_upcrossing_fpd(sf_params, straight, EPS, VolterraGrid(D_MAX, N_STEPS))
    assert ks_distance(_mc(_straight_path(), sf_params, "bridge"), density) < 0.02


def test_log_spiral_volterra_vs_monte_carlo(log_spiral_path, spiral_params):
    density = solve_upcrossing_fpd(spiral_params, log_spiral_path, EPS, VolterraGrid(D_MAX, N_STEPS))
    assert ks_distance(_mc(log_spiral_path, spiral_params, "bridge"), density) < 0.02


def test_multipath_survival_vs_monte_carlo(sf_params, straight):
    p = sf_params.with_updates(multipath=Rician(1.59))
    pmf = first_passage_pmf(p, straight, N_STEPS, DELTA_D, epsilon=EPS)
    empirical = _mc(_straight_path(), p, "discrete", seed=7)
    observed = empirical.censored_count / empirical.trials
    se = math.sqrt(pmf.residual * (1.0 - pmf.residual) / empirical.trials)
    assert abs(observed - pmf.residual) < 3.0 * se + 1e-3
    assert ks_distance(empirical, pmf) < 0.02


def test_multipath_on_the_log_spiral_vs_monte_carlo(log_spiral_path, spiral_params):
    p = spiral_params.with_updates(multipath=Rician(1.59))
    pmf = first_passage_pmf(p, log_spiral_path, N_STEPS, DELTA_D, epsilon=EPS)
    assert ks_distance(_mc(log_spiral_path, p, "discrete", seed=8), pmf) < 0.02


def test_recursion_without_multipath_tracks_volterra(sf_params, straight):
    pmf = first_passage_pmf(sf_params, straight, N_STEPS, DELTA_D, epsilon=EPS, continuous=True)
    density = solve_upcrossing_fpd(sf_params, straight, EPS, VolterraGrid(D_MAX, N_STEPS))
    gap = np.abs(np.interp(pmf.distances, density.distances, density.cdf) - pmf.cdf)
    assert np.max(gap) < 0.01


def _swept_means(config, parameter, values):
    spec = SweepSpec.parse(parameter, values)
    means = []
    for value in spec.values:
        pmf = first_passage_pmf(spec.apply(config.channel, value), config.straight_geometry(), N_STEPS, DELTA_D,
                                epsilon=config.epsilon)
        means.append(pmf.expected_distance()[0])
    return np.array(means)


@pytest.mark.parametrize("parameter, values", [
    ("sigma_sh_sq", "4,8.41,16"),
    ("beta_sh", "5,12.92,25"),
    ("k_ric", "0.5,1.59,10"),
])
def test_expected_fpd_follows_the_parameter_trend(parameter, values):
    config = RunConfig.load(TREND_CONFIG)
    means = _swept_means(config, parameter, values)
    assert np.all(np.diff(means) * EXPECTED_TREND[parameter] > 0.0)


def test_small_start_gap_reverses_the_shadowing_trend(sf_params):
    # 5 dB start gap: multipath peaks exceed the gap, so a wider shadowing spread delays the crossing
    config = RunConfig.load(TREND_CONFIG)
    config = config.with_channel(config.channel.with_updates(k_db=sf_params.k_db))
    means = _swept_means(config, "sigma_sh_sq", "4,8.41,16")
    assert np.all(np.diff(means) > 0.0)

    empirical = [
        _mc(_straight_path(), config.channel.with_updates(sigma_sh_sq=s2), "discrete", seed=5, trials=20_000)
        for s2 in (4.0, 16.0)
    ]
    low, high = (e.expected_distance()[0] for e in empirical)
    assert high - low > 1.0

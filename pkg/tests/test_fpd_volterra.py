import math
import time

import numpy as np
import pytest
from scipy import integrate, stats

from fpdTool.core import fpd_volterra
from fpdTool.core.channel_model import ChannelParams, path_loss_derivative, path_loss_straight
from fpdTool.core.errors import ConditioningUnderflowError, SolverInstabilityError
from fpdTool.core.fpd_volterra import (FpdDensity, VolterraGrid, conditioning_probability, drift_diffusion, psi_kernel,
                                       psi_u_kernel, simpson_weights, solve_fpd, solve_fpd_batch,
                                       solve_upcrossing_fpd, upsilon)
from fpdTool.core.path_geometry import straight_path

EPS = 0.1


def _flux(p, geometry, d, eta, l):
    """-A f / 2 + B df/dgamma / 2 at gamma_th, straight from the Fokker-Planck coefficients."""
    pl_d = path_loss_straight(p, geometry, d)
    pl_l = path_loss_straight(p, geometry, l)
    slope = path_loss_derivative(p, geometry, d)
    rho = math.exp(-(d - l) / p.beta_sh)
    mean = pl_d + rho * (eta - pl_l)
    var = p.sigma_sh_sq * (1 - rho ** 2)
    f = stats.norm.pdf(p.gamma_th, loc=mean, scale=math.sqrt(var))
    df = -(p.gamma_th - mean) / var * f
    a, b = drift_diffusion(p, p.gamma_th, pl_d, slope)
    return -0.5 * a * f + 0.5 * b * df


def test_grid():
    grid = VolterraGrid.from_step(0.03, 10.0)
    assert grid.n_steps % 2 == 0
    assert grid.h == pytest.approx(10.0 / grid.n_steps)
    assert grid.distances[-1] == pytest.approx(10.0)
    with pytest.raises(ValueError):
        VolterraGrid(10.0, 7)


@pytest.mark.parametrize("k", range(2, 10))
def test_simpson_weights_integrate_cubics(k):
    x = np.arange(k + 1, dtype=float)
    w = simpson_weights(k)
    assert w.sum() == pytest.approx(k)
    assert w @ x ** 3 == pytest.approx(k ** 4 / 4.0, rel=1e-12)


def test_trapezoid_for_a_single_panel():
    np.testing.assert_allclose(simpson_weights(1), [0.5, 0.5])
    with pytest.raises(ValueError):
        simpson_weights(0)


def test_psi_matches_flux_formula(sf_params, straight):
    d = 5.0
    for eta in (sf_params.gamma_th - 3.0, sf_params.gamma_th):
        for l in (0.0, 1.0, 2.5, 4.9):
            expected = _flux(sf_params, straight, d, eta, l)
            assert psi_kernel(sf_params, straight, d, eta, l) == pytest.approx(expected, rel=1e-9, abs=1e-15)


def test_psi_vanishes_at_and_beyond_the_diagonal(sf_params, straight):
    l = np.array([5.0, 6.0])
    np.testing.assert_array_equal(psi_kernel(sf_params, straight, 5.0, sf_params.gamma_th, l), 0.0)


def test_psi_is_stable_near_the_diagonal(sf_params, straight):
    gaps = np.array([1e-2, 1e-4, 1e-6, 1e-9])
    values = psi_kernel(sf_params, straight, 5.0, sf_params.gamma_th, 5.0 - gaps)
    assert np.all(np.isfinite(values))
    assert np.all(np.abs(values) < 1.0)


def test_conditioning_probability_and_upsilon(sf_params, straight):
    pl0 = path_loss_straight(sf_params, straight, 0.0)
    assert conditioning_probability(sf_params, straight, EPS) == pytest.approx(
        stats.norm.cdf((sf_params.gamma_th - EPS - pl0) / sf_params.sigma_sh))
    # far along, Gamma(0) and Gamma(d) decorrelate: Upsilon -> (gamma_th - eps - pl0) / (sqrt(2) sigma)
    assert upsilon(sf_params, straight, 10 * sf_params.beta_sh, EPS) == pytest.approx(
        (sf_params.gamma_th - EPS - pl0) / math.sqrt(2 * sf_params.sigma_sh_sq), rel=1e-3)


@pytest.mark.parametrize("d", [0.5, 3.0, 10.0])
def test_upcrossing_kernel_is_the_start_mixture(sf_params, straight, d):
    pl0 = path_loss_straight(sf_params, straight, 0.0)
    a = sf_params.gamma_th - EPS
    prob = stats.norm.cdf((a - pl0) / sf_params.sigma_sh)

    def integrand(g0):
        return psi_kernel(sf_params, straight, d, g0, 0.0) * stats.norm.pdf(g0, pl0, sf_params.sigma_sh) / prob

    lo = a - 12 * sf_params.sigma_sh
    mixture = sum(integrate.quad(integrand, x0, x1, epsabs=0.0, epsrel=1e-11, limit=400)[0]
                  for x0, x1 in ((lo, a - 1.0), (a - 1.0, a)))
    assert psi_u_kernel(sf_params, straight, d, EPS) == pytest.approx(mixture, rel=1e-6)


def test_upcrossing_kernel_rejects_bad_arguments(sf_params, straight):
    with pytest.raises(ValueError):
        psi_u_kernel(sf_params, straight, 1.0, 0.0)
    with pytest.raises(ValueError):
        psi_u_kernel(sf_params, straight, np.array([0.0, 1.0]), EPS)


def test_upcrossing_density_is_a_subprobability(sf_params, straight):
    grid = VolterraGrid(20.0, 400)
    density = solve_upcrossing_fpd(sf_params, straight, EPS, grid)
    assert np.all(density.pdf >= 0.0)
    assert np.all(np.diff(density.cdf) >= 0.0)
    assert 0.05 < density.total_mass <= 1.0 + 1e-6
    mean, residual = density.expected_distance()
    assert residual == pytest.approx(max(0.0, 1.0 - density.total_mass))
    assert 0.0 < mean <= grid.d_max


def test_fixed_start_converges_under_grid_refinement(sf_params, straight):
    gamma0 = sf_params.gamma_th - 5.0
    coarse = solve_fpd(sf_params, straight, gamma0, VolterraGrid(10.0, 200))
    fine = solve_fpd(sf_params, straight, gamma0, VolterraGrid(10.0, 400))
    assert np.max(np.abs(coarse.cdf - fine.cdf[::2])) < 5e-4


def test_upcrossing_equals_mixture_of_fixed_starts(sf_params, straight):
    grid = VolterraGrid(10.0, 400)
    pl0 = path_loss_straight(sf_params, straight, 0.0)
    a = sf_params.gamma_th - EPS
    sigma = sf_params.sigma_sh
    nodes, weights = [], []
    for lo, hi in ((a - 12 * sigma, a - 1.0), (a - 1.0, a)):
        x, w = np.polynomial.legendre.leggauss(200)
        nodes.append(0.5 * (hi - lo) * x + 0.5 * (hi + lo))
        weights.append(0.5 * (hi - lo) * w)
    nodes = np.concatenate(nodes)
    weights = np.concatenate(weights) * stats.norm.pdf(nodes, pl0, sigma) / stats.norm.cdf((a - pl0) / sigma)
    fixed = solve_fpd_batch(sf_params, straight, nodes, grid)
    mixture = sum(w * f.cdf for w, f in zip(weights, fixed))
    direct = solve_upcrossing_fpd(sf_params, straight, EPS, grid)
    assert np.max(np.abs(mixture - direct.cdf)) < 2e-3


def test_straight_geometry_and_tabulated_path_agree(sf_params, straight):
    path = straight_path(550.0, 0.0, 10.0, 0.025)
    grid = VolterraGrid(10.0, 400)
    closed = solve_upcrossing_fpd(sf_params, straight, EPS, grid)
    tabulated = solve_upcrossing_fpd(sf_params, path, EPS, grid)
    np.testing.assert_allclose(tabulated.cdf, closed.cdf, atol=1e-6)


def test_horizon_longer_than_path_is_refused(sf_params):
    path = straight_path(550.0, 0.0, 5.0, 0.025)
    with pytest.raises(ValueError):
        solve_upcrossing_fpd(sf_params, path, EPS, VolterraGrid(10.0, 400))


def test_fixed_start_must_be_below_threshold(sf_params, straight):
    with pytest.raises(ValueError):
        solve_fpd(sf_params, straight, sf_params.gamma_th + 1.0, VolterraGrid(5.0, 100))


def test_conditioning_underflow(straight):
    p = ChannelParams(k_db=200.0)
    with pytest.raises(ConditioningUnderflowError):
        solve_upcrossing_fpd(p, straight, EPS, VolterraGrid(5.0, 100))


def test_curved_path_density(log_spiral_path, spiral_params):
    grid = VolterraGrid(20.0, 2 * int(round(20.0 / 0.06)))
    density = solve_upcrossing_fpd(spiral_params, log_spiral_path, EPS, grid)
    assert np.all(density.pdf >= 0.0)
    assert density.total_mass <= 1.0 + 1e-3


def test_flipped_memory_kernel_is_detected(sf_params, straight, monkeypatch):
    grid = VolterraGrid(20.0, 400)
    good = solve_upcrossing_fpd(sf_params, straight, EPS, grid)
    kernel = fpd_volterra._psi
    monkeypatch.setattr(fpd_volterra, "_psi", lambda *args: -kernel(*args))
    try:
        bad = solve_upcrossing_fpd(sf_params, straight, EPS, grid)
    except SolverInstabilityError:
        return
    assert np.max(np.abs(bad.cdf - good.cdf)) > 0.02


def test_density_from_pdf_clips_and_integrates():
    d = np.linspace(0.0, 1.0, 11)
    density = FpdDensity.from_pdf(d, np.array([0.0, -1e-3] + [1.0] * 9))
    assert density.min_raw_pdf == pytest.approx(-1e-3)
    assert np.all(density.pdf >= 0.0)
    assert density.cdf_at(1.0) == pytest.approx(density.total_mass)


def test_drift_diffusion_coefficients(sf_params):
    a, b = drift_diffusion(sf_params, -108.0, -110.0, 0.2)
    assert a == pytest.approx(0.2 - 2.0 / 12.92)
    assert b == pytest.approx(2 * 8.41 / 12.92)
    a_vec, _ = drift_diffusion(sf_params, np.array([-110.0, -112.0]), -110.0, 0.0)
    np.testing.assert_allclose(a_vec, [0.0, 2.0 / 12.92])


@pytest.mark.slow
def test_marching_cost_is_quadratic(sf_params, straight):
    def run(n_steps):
        best = math.inf
        for _ in range(3):
            start = time.perf_counter()
            solve_upcrossing_fpd(sf_params, straight, EPS, VolterraGrid(30.0, n_steps))
            best = min(best, time.perf_counter() - start)
        return best

    assert run(1600) / run(800) <= 4.5

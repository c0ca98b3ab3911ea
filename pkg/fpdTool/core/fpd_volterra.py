"""
First-passage distance density without multipath

Solves the second-kind Volterra equations
    g(d) = -2 Psi(d | gamma0, 0) + 2 int_0^d g(l) Psi(d | gamma_th, l) dl
and its upcrossing variant (forcing -2 Psi_u) by explicit Simpson marching
on a uniform distance grid.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy import special, stats
from scipy.integrate import cumulative_trapezoid, trapezoid

from .channel_model import ChannelParams, PathLossProfile, path_loss_profile
from .errors import ConditioningUnderflowError, SolverInstabilityError

logger = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e3
NEGATIVE_TOL = 1e-8
MASS_TOL = 1e-6
MIN_CONDITIONING_PROB = 1e-12


@dataclass(frozen=True)
class VolterraGrid:
    """Uniform marching grid d_k = k h, k = 0..n_steps."""
    d_max: float
    n_steps: int

    def __post_init__(self):
        if not self.d_max > 0:
            raise ValueError(f"d_max must be > 0, got {self.d_max}")
        if self.n_steps < 2 or self.n_steps % 2:
            raise ValueError(f"n_steps must be even and >= 2, got {self.n_steps}")

    @classmethod
    def from_step(cls, h: float, d_max: float) -> "VolterraGrid":
        """Grid with step close to h; n_steps rounded up to the next even count."""
        n = int(math.ceil(d_max / h - 1e-9))
        n += n % 2
        return cls(float(d_max), max(n, 2))

    @property
    def h(self) -> float:
        return self.d_max / self.n_steps

    @property
    def distances(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.h


@dataclass(frozen=True)
class FpdDensity:
    distances: np.ndarray
    pdf: np.ndarray
    cdf: np.ndarray
    total_mass: float
    min_raw_pdf: float = 0.0

    @classmethod
    def from_pdf(cls, distances: np.ndarray, pdf: np.ndarray) -> "FpdDensity":
        raw_min = float(np.min(pdf))
        pdf = np.clip(pdf, 0.0, None)
        cdf = cumulative_trapezoid(pdf, distances, initial=0.0)
        return cls(distances, pdf, cdf, float(cdf[-1]), raw_min)

    @property
    def d_max(self) -> float:
        return float(self.distances[-1])

    def cdf_at(self, d) -> np.ndarray:
        return np.interp(d, self.distances, self.cdf)

    def expected_distance(self) -> Tuple[float, float]:
        """
        Returns:
            (mean distance with the censored mass placed at d_max, censored mass)
        """
        residual = max(0.0, 1.0 - self.total_mass)
        mean = float(trapezoid(self.distances * self.pdf, self.distances)) + self.d_max * residual
        return mean, residual


def drift_diffusion(p: ChannelParams, gamma, gamma_pl, gamma_pl_prime):
    """
    A = gamma_pl' - (gamma - gamma_pl)/beta_sh, B = 2 sigma_sh^2 / beta_sh
    """
    a = np.asarray(gamma_pl_prime, dtype=float) - (np.asarray(gamma, dtype=float) - gamma_pl) / p.beta_sh
    b = 2.0 * p.sigma_sh_sq / p.beta_sh
    return (float(a) if np.ndim(a) == 0 else a), b


def _stable_bracket(p: ChannelParams, c_d, slope_d, eta_minus_pl_l, x):
    """
    Bracket of the kernel, x = (d - l)/beta > 0:
        -gamma'/2 - c coth(x)/(2 beta) + (eta - gamma_PL(l))/(2 beta sinh x)
    rewritten with coth x - 1/sinh x = tanh(x/2).
    """
    beta = p.beta_sh
    with np.errstate(over='ignore'):
        inv_sinh = 1.0 / np.sinh(x)
    return (-0.5 * slope_d - c_d * np.tanh(0.5 * x) / (2.0 * beta)
            + (eta_minus_pl_l - c_d) * inv_sinh / (2.0 * beta))


def psi_kernel(p: ChannelParams, source, d: float, eta, l):
    """
    Psi(d | eta, l), vectorized over eta and l; zero where l >= d

    Args:
        source: StraightGeometry, DiscretizedPath or a path-loss profile
    """
    profile = path_loss_profile(p, source)
    return _psi(p, profile, d, eta, np.asarray(l, dtype=float))


def _psi(p: ChannelParams, profile: PathLossProfile, d: float, eta, l: np.ndarray):
    pl_d = float(profile.value(d))
    slope_d = float(profile.derivative(d))
    c_d = p.gamma_th - pl_d
    gap = d - l
    positive = gap > 0
    x = np.where(positive, gap, 1.0) / p.beta_sh
    pl_l = np.asarray(profile.value(np.clip(l, 0.0, d)), dtype=float)
    eta_minus = np.asarray(eta, dtype=float) - pl_l
    bracket = _stable_bracket(p, c_d, slope_d, eta_minus, x)
    mean = pl_d + np.exp(-x) * eta_minus
    sd = np.sqrt(p.sigma_sh_sq * -np.expm1(-2.0 * x))
    density = stats.norm.pdf(p.gamma_th, loc=mean, scale=sd)
    out = np.where(positive, bracket * density, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def conditioning_probability(p: ChannelParams, source, eps: float) -> float:
    """Pr(Gamma(0) < gamma_th - eps)."""
    profile = path_loss_profile(p, source)
    return float(stats.norm.cdf((p.gamma_th - eps - float(profile.value(0.0))) / p.sigma_sh))


def upsilon(p: ChannelParams, source, d, eps: float):
    """Argument of the error function in the upcrossing forcing term."""
    profile = path_loss_profile(p, source)
    d = np.asarray(d, dtype=float)
    pl0 = float(profile.value(0.0))
    c_d = p.gamma_th - np.asarray(profile.value(d), dtype=float)
    num = p.gamma_th - eps - pl0 - np.exp(-d / p.beta_sh) * c_d
    return num / np.sqrt(2.0 * p.sigma_sh_sq * -np.expm1(-2.0 * d / p.beta_sh))


def psi_u_kernel(p: ChannelParams, source, d, eps: float):
    """
    Upcrossing forcing kernel Psi_u(d) for a start conditioned on Gamma(0) < gamma_th - eps

    Equals the mixture of Psi(d | gamma0, 0) over the truncated marginal law of
    Gamma(0). The 1/(2 Pr(Gamma(0) < gamma_th - eps)) prefactor multiplies both terms.
    """
    profile = path_loss_profile(p, source)
    return _psi_u(p, profile, np.asarray(d, dtype=float), eps)


def _psi_u(p: ChannelParams, profile: PathLossProfile, d: np.ndarray, eps: float):
    if not eps > 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    if np.any(d <= 0):
        raise ValueError("Psi_u is defined for d > 0 only")
    sigma_sq, beta = p.sigma_sh_sq, p.beta_sh
    pl0 = float(profile.value(0.0))
    start = p.gamma_th - eps
    prob = float(stats.norm.cdf((start - pl0) / p.sigma_sh))
    if prob < MIN_CONDITIONING_PROB:
        logger.error(f"Conditioning probability underflow: Pr(Gamma0 < gamma_th - eps) = {prob:.3e}")
        raise ConditioningUnderflowError(f"Pr(Gamma(0) < gamma_th - eps) = {prob:.3e}")
    pl_d = np.asarray(profile.value(d), dtype=float)
    slope_d = np.asarray(profile.derivative(d), dtype=float)
    c_d = p.gamma_th - pl_d
    rho = np.exp(-d / beta)
    var_tr = sigma_sq * -np.expm1(-2.0 * d / beta)
    f_start = stats.norm.pdf(start, loc=pl0, scale=p.sigma_sh)
    f_tr = stats.norm.pdf(p.gamma_th, loc=pl_d + rho * (start - pl0), scale=np.sqrt(var_tr))
    f_th = stats.norm.pdf(p.gamma_th, loc=pl_d, scale=p.sigma_sh)
    ups = (start - pl0 - rho * c_d) / np.sqrt(2.0 * var_tr)
    boundary = -(2.0 * sigma_sq / beta) * rho * f_start * f_tr
    bulk = 0.5 * f_th * special.erfc(-ups) * (-slope_d - c_d / beta)
    out = (boundary + bulk) / (2.0 * prob)
    return float(out) if np.ndim(out) == 0 else out


def simpson_weights(k: int) -> np.ndarray:
    """
    Quadrature weights (unit step) for nodes 0..k

    Trapezoid for k = 1, composite Simpson for even k, Simpson 3/8 on the
    first three panels followed by composite Simpson for odd k >= 3.
    """
    if k < 1:
        raise ValueError("need at least one panel")
    if k == 1:
        return np.array([0.5, 0.5])
    w = np.zeros(k + 1)
    start = 0
    if k % 2:
        w[:4] += np.array([3.0, 9.0, 9.0, 3.0]) / 8.0
        start = 3
    n = k - start
    if n:
        seg = np.ones(n + 1)
        seg[1:-1:2] = 4.0
        seg[2:-1:2] = 2.0
        w[start:] += seg / 3.0
    return w


def _march(p: ChannelParams, profile: PathLossProfile, forcing: np.ndarray, grid: VolterraGrid) -> np.ndarray:
    """
    Explicit marching for a batch of forcing rows, forcing shape (m, n_steps + 1)

    The kernel vanishes on the diagonal, so g_k only needs g_0 .. g_{k-1}.
    """
    d = grid.distances
    h = grid.h
    g = np.zeros_like(forcing)
    for k in range(1, grid.n_steps + 1):
        kernel_row = _psi(p, profile, float(d[k]), p.gamma_th, d[:k + 1])
        weights = h * simpson_weights(k) * kernel_row
        g[:, k] = forcing[:, k] + 2.0 * (g[:, :k + 1] @ weights)
        peak = float(np.max(np.abs(g[:, k])))
        if not np.isfinite(peak) or peak > DIVERGENCE_LIMIT:
            logger.error(f"Volterra marching diverged at d={d[k]:.4g} m (|g|={peak:.3e})")
            raise SolverInstabilityError(f"|g| = {peak:.3e} exceeds {DIVERGENCE_LIMIT} at d = {d[k]:.4g} m")
    return g


def _check_horizon(profile: PathLossProfile, grid: VolterraGrid):
    length = getattr(profile, "length", None)
    if length is not None and grid.d_max > length * (1.0 + 1e-9):
        raise ValueError(f"horizon {grid.d_max} m exceeds the path length {length:.6g} m")


def _to_density(grid: VolterraGrid, g: np.ndarray) -> FpdDensity:
    density = FpdDensity.from_pdf(grid.distances, g)
    if density.min_raw_pdf < -NEGATIVE_TOL:
        logger.warning(f"Clipped negative density excursion {density.min_raw_pdf:.3e} per m")
    if density.total_mass > 1.0 + MASS_TOL:
        logger.warning(f"FPD total mass {density.total_mass:.8f} exceeds 1")
    return density


def solve_fpd_batch(p: ChannelParams, source, gamma0s: Sequence[float], grid: VolterraGrid) -> List[FpdDensity]:
    """Fixed-start densities for several starting powers sharing one kernel sweep."""
    profile = path_loss_profile(p, source)
    _check_horizon(profile, grid)
    gamma0s = np.atleast_1d(np.asarray(gamma0s, dtype=float))
    if np.any(gamma0s >= p.gamma_th):
        raise ValueError("every gamma0 must lie below gamma_th")
    d = grid.distances
    forcing = np.zeros((gamma0s.size, d.size))
    for k in range(1, d.size):
        forcing[:, k] = -2.0 * _psi(p, profile, float(d[k]), gamma0s, np.zeros_like(gamma0s))
    g = _march(p, profile, forcing, grid)
    return [_to_density(grid, row) for row in g]


def solve_fpd(p: ChannelParams, source, gamma0: float, grid: VolterraGrid) -> FpdDensity:
    """
    FPD density for a fixed start Gamma(0) = gamma0 < gamma_th

    Curved paths are expected to be certified approximately-Markovian by the caller.
    """
    density = solve_fpd_batch(p, source, [gamma0], grid)[0]
    logger.info(f"Fixed-start FPD solved: {grid.n_steps} steps, mass {density.total_mass:.6f}")
    return density


def solve_upcrossing_fpd(p: ChannelParams, source, eps: float, grid: VolterraGrid) -> FpdDensity:
    """FPD density conditioned on Gamma(0) < gamma_th - eps."""
    profile = path_loss_profile(p, source)
    _check_horizon(profile, grid)
    forcing = np.zeros((1, grid.n_steps + 1))
    forcing[0, 1:] = -2.0 * _psi_u(p, profile, grid.distances[1:], eps)
    density = _to_density(grid, _march(p, profile, forcing, grid)[0])
    logger.info(f"Upcrossing FPD solved: eps={eps} dB, {grid.n_steps} steps, mass {density.total_mass:.6f}")
    return density

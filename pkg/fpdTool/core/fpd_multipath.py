"""
First-passage step distribution with i.i.d. Rician multipath

J_0(y)     = F_MP(gamma_th - eps - gamma_PL(0) - y) N(y; 0, sigma^2)
J_{k+1}(y) = F_MP(gamma_th - gamma_PL(d_{k+1}) - y) (G * J~_k)(y)
with J~_k(u) = J_k(u/rho)/rho and G the N(0, sigma^2 (1 - rho^2)) kernel.
int J_k = Pr(Gamma_0 < gamma_th - eps, Gamma_1, ..., Gamma_k < gamma_th).

Without multipath the chain only sees the shadowing field at the grid
points. continuous=True lowers the threshold of steps k >= 1 by
0.5826 sigma sqrt(1 - rho^2) so the discrete chain tracks crossings of the
continuous field between grid points as well.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import signal, stats
from scipy.interpolate import CubicSpline

from .channel_model import ChannelParams, RicianCdfTable, path_loss_profile
from .errors import AliasingError, ConditioningUnderflowError

logger = logging.getLogger(__name__)

DEFAULT_M_POINTS = 4096
DEFAULT_SPAN_SIGMA = 8.0
EDGE_CELLS = 8
EDGE_MASS_TOL = 1e-8
SURVIVAL_FLOOR = 1e-12
KERNEL_HALF_WIDTH_SD = 10.0
# -zeta(1/2) / sqrt(2 pi), discrete-to-continuous barrier correction
BARRIER_SHIFT = 0.5826


@dataclass(frozen=True)
class GridFunction:
    """Nonnegative samples on a uniform shadowing-dB grid."""
    gamma_grid: np.ndarray
    values: np.ndarray

    @property
    def m(self) -> int:
        return self.gamma_grid.size

    @property
    def step(self) -> float:
        return float(self.gamma_grid[1] - self.gamma_grid[0])

    def integral(self) -> float:
        return float(np.sum(self.values) * self.step)


@dataclass(frozen=True)
class FirstPassagePmf:
    """
    Distribution of the first step k >= 1 with Gamma_k >= gamma_th

    survival[k] = Pr(Gamma_1..Gamma_k < gamma_th | Gamma_0 < gamma_th - epsilon), k = 0..N.
    """
    steps: np.ndarray
    distances: np.ndarray
    pmf: np.ndarray
    survival: np.ndarray
    delta_d: float

    @property
    def cdf(self) -> np.ndarray:
        return 1.0 - self.survival[1:]

    @property
    def residual(self) -> float:
        return float(self.survival[-1])

    @property
    def d_max(self) -> float:
        return float(self.distances[-1])

    def expected_distance(self) -> Tuple[float, float]:
        """(sum d_k pmf_k + d_max residual, residual)"""
        return float(np.sum(self.distances * self.pmf)) + self.d_max * self.residual, self.residual


def make_gamma_grid(p: ChannelParams, m_points: int = DEFAULT_M_POINTS,
                    span_sigma: float = DEFAULT_SPAN_SIGMA) -> np.ndarray:
    if m_points < 16:
        raise ValueError("m_points must be >= 16")
    if span_sigma < 8.0:
        raise ValueError("the shadowing grid must span at least +-8 sigma")
    half = span_sigma * p.sigma_sh
    return np.linspace(-half, half, m_points)


class MultipathCdf:
    """
    F_MP evaluated on shadowing grid cells

    With Rician multipath the precomputed table is sampled at the cell centres.
    Without multipath F_MP is the unit step, applied as the covered fraction
    of each cell.
    """

    def __init__(self, p: ChannelParams, table: Optional[RicianCdfTable] = None):
        self.rician = p.multipath is not None
        self.table = None
        if self.rician:
            self.table = table if table is not None else RicianCdfTable(p.multipath.k_ric)

    def below(self, cutoff: float, gamma_grid: np.ndarray) -> np.ndarray:
        """Pr(gamma + Gamma_MP < cutoff + ...) weights: F_MP(cutoff - gamma) per cell."""
        if self.rician:
            return self.table(cutoff - gamma_grid)
        step = gamma_grid[1] - gamma_grid[0]
        return np.clip((cutoff - (gamma_grid - 0.5 * step)) / step, 0.0, 1.0)


def _resolve_cdf(p: ChannelParams, mp_cdf: Optional[MultipathCdf]) -> MultipathCdf:
    return mp_cdf if mp_cdf is not None else MultipathCdf(p)


def init_j0(p: ChannelParams, gamma_pl_0: float, grid: np.ndarray,
            mp_cdf: Optional[MultipathCdf] = None, epsilon: float = 0.0) -> GridFunction:
    """J_0 = F_MP(gamma_th - epsilon - gamma_PL(0) - y) times the N(0, sigma^2) density."""
    if epsilon < 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    mp_cdf = _resolve_cdf(p, mp_cdf)
    density = stats.norm.pdf(grid, loc=0.0, scale=p.sigma_sh)
    return GridFunction(grid, mp_cdf.below(p.gamma_th - epsilon - gamma_pl_0, grid) * density)


def continuity_shift(p: ChannelParams, delta_d: float) -> float:
    """Threshold offset (dB) that makes monitoring every delta_d mimic continuous monitoring."""
    return BARRIER_SHIFT * p.sigma_sh * math.sqrt(-math.expm1(-2.0 * delta_d / p.beta_sh))


def transition_weights(p: ChannelParams, delta_d: float, step: float) -> np.ndarray:
    """Discrete N(0, sigma^2 (1 - rho^2)) kernel on the grid spacing, normalized to sum 1."""
    sd = p.sigma_sh * math.sqrt(-math.expm1(-2.0 * delta_d / p.beta_sh))
    half = int(math.ceil(KERNEL_HALF_WIDTH_SD * sd / step))
    if half == 0 or sd < 1e-3 * step:
        return np.ones(1)
    offsets = np.arange(-half, half + 1) * step
    w = stats.norm.pdf(offsets, scale=sd)
    return w / w.sum()


def rescale(j_k: GridFunction, rho: float) -> np.ndarray:
    """J~(u) = J(u/rho)/rho by cubic interpolation; zero outside the grid."""
    if rho == 1.0:
        return j_k.values.copy()
    spline = CubicSpline(j_k.gamma_grid, j_k.values, extrapolate=False)
    out = np.nan_to_num(spline(j_k.gamma_grid / rho), nan=0.0) / rho
    return np.clip(out, 0.0, None)


def convolve(values: np.ndarray, weights: np.ndarray, method: str = "fft") -> np.ndarray:
    """Same-size discrete convolution; "fft" or "direct"."""
    if method == "fft":
        out = signal.fftconvolve(values, weights, mode='same')
    elif method == "direct":
        out = np.convolve(values, weights, mode='same')
    else:
        raise ValueError(f"unknown convolution method {method!r}")
    return np.clip(out, 0.0, None)


def _check_edges(j: GridFunction, k: int):
    total = float(np.sum(j.values))
    if total <= 0.0:
        return
    edge = float(np.sum(j.values[:EDGE_CELLS]) + np.sum(j.values[-EDGE_CELLS:]))
    if edge > EDGE_MASS_TOL * total:
        logger.error(f"J_{k} reached the grid edge ({edge / total:.2e} of its mass)")
        raise AliasingError(f"J_{k} mass at the grid edge is {edge / total:.2e} of the total; widen span_sigma")


def recursion_step(p: ChannelParams, gamma_pl_next: float, j_k: GridFunction, delta_d: float,
                   mp_cdf: Optional[MultipathCdf] = None, method: str = "fft",
                   barrier_shift: float = 0.0) -> GridFunction:
    """One step of the J recursion over a distance delta_d."""
    mp_cdf = _resolve_cdf(p, mp_cdf)
    rho = math.exp(-delta_d / p.beta_sh)
    stretched = rescale(j_k, rho)
    weights = transition_weights(p, delta_d, j_k.step)
    spread = convolve(stretched, weights, method)
    grid = j_k.gamma_grid
    return GridFunction(grid, mp_cdf.below(p.gamma_th - barrier_shift - gamma_pl_next, grid) * spread)


def survival_probability(p: ChannelParams, source, n_steps: int, delta_d: float,
                         grid: Optional[np.ndarray] = None, method: str = "fft",
                         epsilon: float = 0.0, continuous: bool = False) -> np.ndarray:
    """
    Joint probabilities Pr(Gamma_0 < gamma_th - epsilon, Gamma_1..Gamma_k < gamma_th), k = 0..n_steps

    Args:
        source: straight geometry, discretized path or path-loss profile
        continuous: count crossings between grid points too (no multipath only)
    """
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    if continuous and p.multipath is not None:
        raise ValueError("continuous monitoring needs a channel without multipath")
    profile = path_loss_profile(p, source)
    grid = make_gamma_grid(p) if grid is None else grid
    mp_cdf = MultipathCdf(p)
    shift = continuity_shift(p, delta_d) if continuous else 0.0
    j = init_j0(p, float(profile.value(0.0)), grid, mp_cdf, epsilon)
    out = np.zeros(n_steps + 1)
    out[0] = j.integral()
    if out[0] < 1e-300:
        raise ConditioningUnderflowError(f"Pr(Gamma_0 < gamma_th - {epsilon:g}) = {out[0]:.3e}")
    for k in range(1, n_steps + 1):
        j = recursion_step(p, float(profile.value(k * delta_d)), j, delta_d, mp_cdf, method, shift)
        _check_edges(j, k)
        out[k] = j.integral()
        if out[k] < SURVIVAL_FLOOR * out[0]:
            logger.warning(f"Survival below {SURVIVAL_FLOOR:g} at step {k}; remaining steps set to 0")
            out[k + 1:] = 0.0
            break
    return out


def first_passage_pmf(p: ChannelParams, source, n_steps: int, delta_d: float,
                      grid: Optional[np.ndarray] = None, epsilon: float = 0.0,
                      continuous: bool = False) -> FirstPassagePmf:
    """Pr(K = k) for k = 1..n_steps, K the first step at or above threshold."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    joint = survival_probability(p, source, n_steps, delta_d, grid, epsilon=epsilon, continuous=continuous)
    survival = np.minimum.accumulate(np.clip(joint / joint[0], 0.0, 1.0))
    pmf = survival[:-1] - survival[1:]
    steps = np.arange(1, n_steps + 1)
    logger.info(f"Multipath step pmf computed: {n_steps} steps, residual survival {survival[-1]:.6f}")
    return FirstPassagePmf(steps, steps * delta_d, pmf, survival, float(delta_d))


def brute_force_joint_probability(p: ChannelParams, gamma_pl: np.ndarray, delta_d: float,
                                  m_points: int = 64, span_sigma: float = 8.0) -> float:
    """
    Pr(Gamma_0..Gamma_N < gamma_th) by direct quadrature of the nested Markov-chain
    integral on a coarse grid (no rescaling, no fast transform). Reference for tests.
    """
    grid = make_gamma_grid(p, m_points, span_sigma)
    step = grid[1] - grid[0]
    rho = math.exp(-delta_d / p.beta_sh)
    sd = p.sigma_sh * math.sqrt(-math.expm1(-2.0 * delta_d / p.beta_sh))
    mp_cdf = MultipathCdf(p)
    # transition[i, j] = f(y_i | x_j) dy
    transition = stats.norm.pdf(grid[:, None], loc=rho * grid[None, :], scale=sd) * step
    below = [mp_cdf.below(p.gamma_th - float(v), grid) for v in gamma_pl]
    vec = below[0] * stats.norm.pdf(grid, scale=p.sigma_sh) * step
    for k in range(1, len(gamma_pl)):
        vec = below[k] * (transition @ vec)
    return float(vec.sum())

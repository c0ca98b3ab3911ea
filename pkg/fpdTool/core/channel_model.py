"""
Channel model: path loss, exponentially correlated shadowing and Rician multipath

All powers are in dB, distances in meters. Functions accept scalars or numpy
arrays for the distance / power arguments and broadcast like numpy ufuncs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Optional, Protocol, Tuple, Union

import numpy as np
from scipy import integrate, special, stats

from .errors import DegenerateGeometryError

if TYPE_CHECKING:
    from .path_geometry import DiscretizedPath

logger = logging.getLogger(__name__)

LOG10_E = math.log10(math.e)
# Squared operator distance below which the log of the path loss is refused (m^2)
LOG_ARG_FLOOR = 1e-12

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class Rician:
    """Rician multipath with power ratio K (line of sight over scattered)."""
    k_ric: float

    def __post_init__(self):
        if not (self.k_ric >= 0.0 and math.isfinite(self.k_ric)):
            raise ValueError(f"k_ric must be finite and >= 0, got {self.k_ric}")


@dataclass(frozen=True)
class ChannelParams:
    """
    Channel constants

    Defaults are the San Francisco fit: n_pl=4.2, sigma_sh^2=8.41 dB^2,
    beta_sh=12.92 m, gamma_th=-110 dB. k_db has no published value and
    defaults to 0 dB.
    """
    k_db: float = 0.0
    n_pl: float = 4.2
    sigma_sh_sq: float = 8.41
    beta_sh: float = 12.92
    multipath: Optional[Rician] = None
    gamma_th: float = -110.0

    def __post_init__(self):
        if not self.sigma_sh_sq > 0:
            raise ValueError(f"sigma_sh_sq must be > 0, got {self.sigma_sh_sq}")
        if not self.beta_sh > 0:
            raise ValueError(f"beta_sh must be > 0, got {self.beta_sh}")
        if not self.n_pl > 0:
            raise ValueError(f"n_pl must be > 0, got {self.n_pl}")

    @property
    def sigma_sh(self) -> float:
        return math.sqrt(self.sigma_sh_sq)

    def correlation(self, dist: ArrayLike) -> ArrayLike:
        """rho(dist) = exp(-dist / beta_sh)"""
        return np.exp(-np.asarray(dist, dtype=float) / self.beta_sh)

    def with_updates(self, **changes) -> "ChannelParams":
        return replace(self, **changes)

    def without_multipath(self) -> "ChannelParams":
        return replace(self, multipath=None)


@dataclass(frozen=True)
class StraightGeometry:
    """Straight path starting d_src from the operator, heading theta_src clockwise
    from the robot-to-operator direction (theta_src=0 drives straight at the operator)."""
    d_src: float
    theta_src: float = 0.0

    def __post_init__(self):
        if not self.d_src > 0:
            raise ValueError(f"d_src must be > 0, got {self.d_src}")
        if not 0.0 <= self.theta_src < 2.0 * math.pi:
            raise ValueError(f"theta_src must be in [0, 2pi), got {self.theta_src}")

    def squared_distance(self, d: ArrayLike) -> ArrayLike:
        d = np.asarray(d, dtype=float)
        return self.d_src ** 2 + d ** 2 - 2.0 * self.d_src * d * math.cos(self.theta_src)


def _checked_sq_distance(g: StraightGeometry, d: ArrayLike) -> np.ndarray:
    q2 = g.squared_distance(d)
    if np.any(q2 <= LOG_ARG_FLOOR):
        raise DegenerateGeometryError(
            f"path passes within {math.sqrt(LOG_ARG_FLOOR):.1e} m of the operator"
        )
    return q2


def _unwrap(x: np.ndarray) -> ArrayLike:
    return float(x) if np.ndim(x) == 0 else x


# ---------------- Path loss ----------------
def path_loss_straight(p: ChannelParams, g: StraightGeometry, d: ArrayLike) -> ArrayLike:
    """gamma_PL(d) = K_dB - 5 n_PL log10(d_src^2 + d^2 - 2 d_src d cos(theta_src))"""
    q2 = _checked_sq_distance(g, d)
    return _unwrap(p.k_db - 5.0 * p.n_pl * np.log10(q2))


def path_loss_derivative(p: ChannelParams, g: StraightGeometry, d: ArrayLike) -> ArrayLike:
    """d gamma_PL / dd along a straight path, dB/m."""
    q2 = _checked_sq_distance(g, d)
    d = np.asarray(d, dtype=float)
    slope = -10.0 * p.n_pl * LOG10_E * (d - g.d_src * math.cos(g.theta_src)) / q2
    return _unwrap(slope)


def path_loss_point(p: ChannelParams, points: np.ndarray) -> np.ndarray:
    """gamma_PL at planar points (operator at the origin)."""
    q2 = np.sum(np.asarray(points, dtype=float) ** 2, axis=-1)
    if np.any(q2 <= LOG_ARG_FLOOR):
        raise DegenerateGeometryError("a path point coincides with the operator")
    return p.k_db - 5.0 * p.n_pl * np.log10(q2)


class PathLossProfile(Protocol):
    """Anything that gives gamma_PL and its derivative at a travelled distance."""

    def value(self, d: ArrayLike) -> ArrayLike: ...

    def derivative(self, d: ArrayLike) -> ArrayLike: ...


@dataclass(frozen=True)
class StraightProfile:
    """Closed-form profile of a straight path."""
    params: ChannelParams
    geometry: StraightGeometry

    def value(self, d: ArrayLike) -> ArrayLike:
        return path_loss_straight(self.params, self.geometry, d)

    def derivative(self, d: ArrayLike) -> ArrayLike:
        return path_loss_derivative(self.params, self.geometry, d)


@dataclass(frozen=True)
class PathLossTable:
    """
    Tabulated path loss along a discretized path

    Values between nodes are linearly interpolated; queries outside
    [distances[0], distances[-1]] are rejected.
    """
    distances: np.ndarray
    values: np.ndarray
    derivatives: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not (len(self.distances) == len(self.values) == len(self.derivatives)):
            raise ValueError("distances, values and derivatives must have equal length")
        if len(self.distances) < 2 or np.any(np.diff(self.distances) <= 0):
            raise ValueError("distances must be strictly increasing with at least 2 nodes")

    @property
    def length(self) -> float:
        return float(self.distances[-1])

    def _check(self, d: ArrayLike) -> np.ndarray:
        d = np.asarray(d, dtype=float)
        tol = 1e-9 * max(1.0, self.length)
        if np.any(d < self.distances[0] - tol) or np.any(d > self.length + tol):
            raise ValueError(f"distance outside the tabulated range [0, {self.length:.6g}] m")
        return d

    def value(self, d: ArrayLike) -> ArrayLike:
        return _unwrap(np.interp(self._check(d), self.distances, self.values))

    def derivative(self, d: ArrayLike) -> ArrayLike:
        return _unwrap(np.interp(self._check(d), self.distances, self.derivatives))

    def pairs(self) -> list:
        """(value, derivative) per node."""
        return list(zip(self.values.tolist(), self.derivatives.tolist()))


def path_loss_along_path(p: ChannelParams, path: "DiscretizedPath") -> PathLossTable:
    """
    Path loss at every point of a discretized path

    The derivative is the numerical gradient along arc length: central
    differences inside, second-order one-sided differences at the ends.
    """
    values = path_loss_point(p, path.points)
    derivatives = np.gradient(values, path.delta_d, edge_order=2)
    return PathLossTable(np.asarray(path.cumulative_s, dtype=float), values, derivatives)


def path_loss_profile(p: ChannelParams, source) -> PathLossProfile:
    """Resolve a straight geometry, a discretized path or a ready profile."""
    if isinstance(source, StraightGeometry):
        return StraightProfile(p, source)
    if hasattr(source, "points") and hasattr(source, "delta_d"):
        return path_loss_along_path(p, source)
    if hasattr(source, "value") and hasattr(source, "derivative"):
        return source
    raise TypeError(f"cannot build a path-loss profile from {type(source).__name__}")


# ---------------- Shadowing ----------------
def shadowing_cov(p: ChannelParams, dist: ArrayLike) -> ArrayLike:
    """C(dist) = sigma_sh^2 exp(-dist / beta_sh)"""
    dist = np.asarray(dist, dtype=float)
    if np.any(dist < 0):
        raise ValueError("distance must be >= 0")
    return _unwrap(p.sigma_sh_sq * np.exp(-dist / p.beta_sh))


def transition_moments(p: ChannelParams, gamma_pl_l: ArrayLike, gamma_pl_d: ArrayLike,
                       eta: ArrayLike, gap: ArrayLike) -> Tuple[ArrayLike, ArrayLike]:
    """
    Mean and variance of Gamma(d) given Gamma(l) = eta, gap = d - l >= 0.

    Returns:
        (gamma_pl_d + rho (eta - gamma_pl_l), sigma^2 (1 - rho^2)) with rho = exp(-gap/beta)
    """
    gap = np.asarray(gap, dtype=float)
    if np.any(gap < 0):
        raise ValueError("gap must be >= 0")
    rho = np.exp(-gap / p.beta_sh)
    mean = np.asarray(gamma_pl_d, dtype=float) + rho * (np.asarray(eta, dtype=float) - gamma_pl_l)
    var = p.sigma_sh_sq * -np.expm1(-2.0 * gap / p.beta_sh)
    return _unwrap(mean), _unwrap(np.asarray(var))


def transition_pdf(p: ChannelParams, gamma: ArrayLike, gamma_pl_l: ArrayLike, gamma_pl_d: ArrayLike,
                   eta: ArrayLike, gap: ArrayLike) -> ArrayLike:
    """Transition density f(gamma, d | eta, l); gap must be > 0."""
    mean, var = transition_moments(p, gamma_pl_l, gamma_pl_d, eta, gap)
    return _unwrap(stats.norm.pdf(gamma, loc=mean, scale=np.sqrt(var)))


def marginal_pdf(p: ChannelParams, gamma_pl_d: ArrayLike, gamma: ArrayLike) -> ArrayLike:
    """f(gamma, d): N(gamma_pl_d, sigma_sh^2) density."""
    return _unwrap(stats.norm.pdf(gamma, loc=gamma_pl_d, scale=p.sigma_sh))


# ---------------- Rician multipath ----------------
def rician_pdf(k_ric: float, z: ArrayLike) -> ArrayLike:
    """
    Unit-mean Rician power density

    f(z) = (1+K) exp(-K - (1+K) z) I0(2 sqrt(z K (1+K))), evaluated with the
    exponentially scaled Bessel function so large K does not overflow.
    """
    z = np.asarray(z, dtype=float)
    x = 2.0 * np.sqrt(np.clip(z, 0.0, None) * k_ric * (1.0 + k_ric))
    out = (1.0 + k_ric) * np.exp(-k_ric - (1.0 + k_ric) * z + x) * special.i0e(x)
    return _unwrap(np.where(z < 0, 0.0, out))


def _rician_cdf_quad(k_ric: float, z: float) -> float:
    if z <= 0.0:
        return 0.0
    if math.isinf(z):
        return 1.0
    kwargs = dict(epsabs=0.0, epsrel=1e-10, limit=200)
    if z <= 1.0:
        value, _ = integrate.quad(lambda t: rician_pdf(k_ric, t), 0.0, z, **kwargs)
        return float(value)
    # above the unit mean the upper tail is the well-conditioned quantity
    tail, _ = integrate.quad(lambda t: rician_pdf(k_ric, t), z, np.inf, epsabs=1e-300,
                             epsrel=1e-10, limit=200)
    return float(1.0 - tail)


def _rician_cdf_ncx2(k_ric: float, z: np.ndarray) -> np.ndarray:
    z = np.clip(z, 0.0, None)
    if k_ric == 0.0:
        return -np.expm1(-z)
    # 2(1+K) Z is noncentral chi-square with 2 degrees of freedom and noncentrality 2K
    return stats.ncx2.cdf(2.0 * (1.0 + k_ric) * z, df=2, nc=2.0 * k_ric)


def rician_cdf_db(k_ric: float, gamma_mp: ArrayLike, method: str = "quad") -> ArrayLike:
    """
    CDF of the multipath power in dB, F_MP(gamma_mp) = Pr(10 log10 Z <= gamma_mp)

    Args:
        k_ric: Rician factor (>= 0)
        gamma_mp: dB value(s); -inf and +inf are accepted
        method: "quad" (adaptive quadrature of the density, reference) or
            "ncx2" (noncentral chi-square CDF, vectorized)
    """
    if k_ric < 0:
        raise ValueError(f"k_ric must be >= 0, got {k_ric}")
    gamma_mp = np.asarray(gamma_mp, dtype=float)
    with np.errstate(over="ignore"):
        z = np.power(10.0, gamma_mp / 10.0)
    if method == "ncx2":
        return _unwrap(_rician_cdf_ncx2(k_ric, z))
    if method != "quad":
        raise ValueError(f"unknown Rician CDF method {method!r}")
    out = np.array([_rician_cdf_quad(k_ric, float(v)) for v in z.ravel()]).reshape(z.shape)
    return _unwrap(out)


class RicianCdfTable:
    """
    Precomputed F_MP on a uniform dB lattice, linearly interpolated

    Outside the lattice the end values are held (F -> 0 below, 1 above).
    """

    def __init__(self, k_ric: float, lo_db: float = -80.0, hi_db: float = 25.0, step_db: float = 0.005):
        if not hi_db > lo_db or not step_db > 0:
            raise ValueError("invalid Rician table lattice")
        n = int(round((hi_db - lo_db) / step_db)) + 1
        self.k_ric = k_ric
        self.grid_db = np.linspace(lo_db, hi_db, n)
        self.values = np.maximum.accumulate(rician_cdf_db(k_ric, self.grid_db, method="ncx2"))
        logger.debug(f"Rician CDF table built: K={k_ric}, {n} nodes on [{lo_db}, {hi_db}] dB")

    def __call__(self, gamma_mp: ArrayLike) -> ArrayLike:
        return _unwrap(np.interp(gamma_mp, self.grid_db, self.values))

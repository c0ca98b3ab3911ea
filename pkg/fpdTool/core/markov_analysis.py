"""
Approximately-Markovian admissibility

KL divergence between the full-history conditional shadowing law and its
one-step Markov approximation, the exclusion-ball radius it implies, the
curvature threshold, and the overall path certificate.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, optimize
from scipy.spatial.distance import cdist

from .channel_model import ChannelParams, shadowing_cov
from .errors import InfeasibleCurvatureError, KlDomainError, SingularCovarianceError
from .path_geometry import (DiscretizedPath, LoopVerdict, curvature_profile, is_dth_loop_free)

logger = logging.getLogger(__name__)

PHI_GRID_POINTS = 2048
KAPPA_SCAN_POINTS = 1024
KAPPA_SCAN_POINTS = 16
GOLDEN_TOL = 1e-10
BISECTION_RTOL = 1e-10
# kappa_th is kept strictly below 1/d_th by this relative margin
BALL_MARGIN = 1e-9


@dataclass(frozen=True)
class KlStats:
    m_kl: float
    sigma_kl: float
    sigma_dm_sq: float

    def to_dict(self) -> dict:
        return {"m_kl": self.m_kl, "sigma_kl": self.sigma_kl, "sigma_dm_sq": self.sigma_dm_sq}


@dataclass(frozen=True)
class MarkovTolerance:
    """
    Admissibility bundle: the two KL tolerances and what they imply

    binding tells which constraint fixed kappa_th: "kl" when the curvature
    problem binds, "ball" when kappa_th sits at the 1/d_th supremum.
    """
    eps_m: float
    eps_sigma: float
    eps_d: float
    d_th: float
    kappa_th: float
    binding: str = "kl"

    @classmethod
    def derive(cls, p: ChannelParams, delta_d: float, eps_m: float, eps_sigma: float) -> "MarkovTolerance":
        eps_d = tolerance_eps_d(eps_m, eps_sigma)
        if eps_d >= 1.0:
            raise ValueError(f"tolerances too loose: eps_d={eps_d} >= 1")
        d_th = ball_radius(p, delta_d, eps_m, eps_sigma)
        kappa_th, binding = _curvature_search(p, delta_d, d_th, eps_d)
        return cls(eps_m, eps_sigma, eps_d, d_th, kappa_th, binding)

    def to_dict(self) -> dict:
        return {
            "eps_m": self.eps_m,
            "eps_sigma": self.eps_sigma,
            "eps_d": self.eps_d,
            "d_th_m": self.d_th,
            "kappa_th_per_m": self.kappa_th,
            "kappa_binding": self.binding,
        }


# ---------------- KL statistics ----------------
def tolerance_eps_d(eps_m: float, eps_sigma: float) -> float:
    """eps_d = min(1 - exp(-2 eps_m), sqrt(2) eps_sigma)"""
    if not (eps_m > 0 and eps_sigma > 0):
        raise ValueError("eps_m and eps_sigma must be > 0")
    return min(-math.expm1(-2.0 * eps_m), math.sqrt(2.0) * eps_sigma)


def _markov_variance(p: ChannelParams, d1: float) -> float:
    """sigma_hat^2 = sigma^2 (1 - rho^2), rho = exp(-d1/beta)"""
    return p.sigma_sh_sq * -math.expm1(-2.0 * d1 / p.beta_sh)


def _kl_from_ratio(ratio: float, sigma_dm_sq: float) -> KlStats:
    if ratio >= 1.0:
        raise KlDomainError(f"sigma_dm^2 / sigma_hat^2 = {ratio:.6g} >= 1: tolerance analysis breaks down")
    return KlStats(m_kl=-0.5 * math.log1p(-ratio), sigma_kl=ratio / math.sqrt(2.0), sigma_dm_sq=sigma_dm_sq)


def three_point_kl(p: ChannelParams, d1: float, dr: float, d1r: float) -> KlStats:
    """
    KL mean and std when the history is the previous point (distance d1) plus
    one older point (distance dr from the current, d1r from the previous).
    """
    if not (d1 > 0 and dr > d1):
        raise ValueError(f"need 0 < d1 < dr, got d1={d1}, dr={dr}")
    tol = 1e-9 * (dr + d1)
    if not (abs(dr - d1) - tol <= d1r <= dr + d1 + tol):
        raise ValueError(f"distances (d1={d1}, dr={dr}, d1r={d1r}) violate the triangle inequality")
    beta = p.beta_sh
    # exp(-dr/b) - exp(-(d1+d1r)/b) = exp(-dr/b) (1 - exp(-(d1+d1r-dr)/b))
    excess = max(d1 + d1r - dr, 0.0)
    numerator = (math.exp(-dr / beta) * -math.expm1(-excess / beta)) ** 2
    sigma_dm_sq = p.sigma_sh_sq * numerator / -math.expm1(-2.0 * d1r / beta)
    ratio = sigma_dm_sq / _markov_variance(p, d1)
    return _kl_from_ratio(ratio, sigma_dm_sq)


def _as_points(x) -> np.ndarray:
    return np.atleast_2d(np.asarray(x, dtype=float))


def conditional_gaussian_oracle(p: ChannelParams, current, history) -> Tuple[np.ndarray, float]:
    """
    Exact Gaussian conditioning of the shadowing at current on the history points

    Args:
        current: (2,) point
        history: (n, 2) points ordered from the most recent backwards

    Returns:
        (alpha, sigma^2): conditional mean coefficients and conditional variance
    """
    q0 = _as_points(current)
    hist = _as_points(history)
    if hist.shape[0] == 0:
        raise ValueError("history must not be empty")
    pair = cdist(hist, hist)
    np.fill_diagonal(pair, np.inf)
    if np.any(pair <= 1e-12) or np.any(cdist(q0, hist) <= 1e-12):
        raise SingularCovarianceError("two conditioning locations coincide")
    np.fill_diagonal(pair, 0.0)
    sigma_hist = shadowing_cov(p, pair)
    sigma_cross = shadowing_cov(p, cdist(hist, q0)[:, 0])
    try:
        alpha = linalg.solve(sigma_hist, sigma_cross, assume_a='pos')
    except linalg.LinAlgError as e:
        raise SingularCovarianceError(f"history covariance is singular: {e}") from e
    var = p.sigma_sh_sq - float(sigma_cross @ alpha)
    return alpha, var


def history_kl(p: ChannelParams, current, history) -> KlStats:
    """
    KL statistics of dropping all history but the most recent point

    m_KL = sigma_dm^2/(2 sigma_hat^2) + (r - 1 - ln r)/2,
    sigma_KL = sigma_dm^2/(sqrt(2) sigma_hat^2), r = sigma^2/sigma_hat^2.
    """
    q0 = _as_points(current)
    hist = _as_points(history)
    alpha, var = conditional_gaussian_oracle(p, q0, hist)
    d1 = float(np.linalg.norm(hist[0] - q0[0]))
    sigma_hat_sq = _markov_variance(p, d1)
    delta_alpha = alpha.copy()
    delta_alpha[0] -= math.exp(-d1 / p.beta_sh)
    pair = cdist(hist, hist)
    sigma_dm_sq = max(float(delta_alpha @ shadowing_cov(p, pair) @ delta_alpha), 0.0)
    x = (sigma_hat_sq - var) / sigma_hat_sq  # 1 - r
    if x >= 1.0:
        raise KlDomainError("conditional variance collapsed to zero")
    variance_term = -x - math.log1p(-x)
    ratio = sigma_dm_sq / sigma_hat_sq
    return KlStats(m_kl=0.5 * ratio + 0.5 * variance_term, sigma_kl=ratio / math.sqrt(2.0),
                   sigma_dm_sq=sigma_dm_sq)


# ---------------- Ball radius ----------------
def ball_radius(p: ChannelParams, delta_d: float, eps_m: float, eps_sigma: float) -> float:
    """
    Radius beyond which a single excluded history point stays within tolerance

    d_th = (beta/2) ln(rho^2 + (1 - rho^2)/eps_d), rho = exp(-delta_d/beta),
    written as (beta/2) log1p((1 - rho^2)(1/eps_d - 1)).
    """
    eps_d = tolerance_eps_d(eps_m, eps_sigma)
    if eps_d >= 1.0 or delta_d <= 0.0:
        return 0.0
    one_minus_rho_sq = -math.expm1(-2.0 * delta_d / p.beta_sh)
    return 0.5 * p.beta_sh * math.log1p(one_minus_rho_sq * (1.0 / eps_d - 1.0))


# ---------------- Curvature threshold ----------------
def _circle_angles(kappa: float, delta_d: float, d_th: float) -> Tuple[float, float]:
    """(delta_phi, h_cons) for a circle of curvature kappa."""
    delta_phi = 2.0 * math.asin(min(kappa * delta_d / 2.0, 1.0))
    h_cons = 2.0 * math.asin(min(kappa * d_th / 2.0, 1.0)) - delta_phi
    return delta_phi, h_cons


def h_opt(p: ChannelParams, delta_d: float, kappa: float, phi) -> np.ndarray:
    """
    sigma_dm^2 / sigma_hat^2 for three points on a circle of curvature kappa:
    the current point, its predecessor one step back and a point phi further.
    """
    phi = np.asarray(phi, dtype=float)
    if kappa <= 0.0:
        return np.zeros_like(phi)
    radius = 1.0 / kappa
    beta = p.beta_sh
    delta_phi = 2.0 * math.asin(min(kappa * delta_d / 2.0, 1.0))
    d1r = 2.0 * radius * np.sin(phi / 2.0)
    dr = 2.0 * radius * np.sin((phi + delta_phi) / 2.0)
    excess = np.clip(delta_d + d1r - dr, 0.0, None)
    numerator = (np.exp(-dr / beta) * -np.expm1(-excess / beta)) ** 2
    with np.errstate(divide='ignore', invalid='ignore'):
        out = numerator / (-np.expm1(-2.0 * d1r / beta) * -math.expm1(-2.0 * delta_d / beta))
    return np.where(phi > 0, out, 0.0)


def max_h_opt(p: ChannelParams, delta_d: float, d_th: float, kappa: float) -> Tuple[float, float]:
    """
    Maximum of h_opt over phi in (0, h_cons(kappa)]

    Dense grid search followed by golden-section refinement of the best cell.

    Returns:
        (phi_star, h_opt(phi_star))
    """
    if kappa <= 0.0:
        return 0.0, 0.0
    _, h_cons = _circle_angles(kappa, delta_d, d_th)
    if h_cons <= 0.0:
        return 0.0, 0.0
    grid = h_cons * np.arange(1, PHI_GRID_POINTS + 1) / PHI_GRID_POINTS
    values = h_opt(p, delta_d, kappa, grid)
    i = int(np.argmax(values))
    best_phi, best = float(grid[i]), float(values[i])
    if 0 < i < PHI_GRID_POINTS - 1:
        res = optimize.minimize_scalar(lambda x: -float(h_opt(p, delta_d, kappa, x)),
                                       bracket=(grid[i - 1], grid[i], grid[i + 1]),
                                       method='golden', tol=GOLDEN_TOL)
        if -res.fun > best and 0.0 < res.x <= h_cons:
            best_phi, best = float(res.x), float(-res.fun)
    return best_phi, best


def _feasible(p: ChannelParams, delta_d: float, d_th: float, eps_d: float, kappa: float) -> bool:
    return max_h_opt(p, delta_d, d_th, kappa)[1] <= eps_d


def _curvature_search(p: ChannelParams, delta_d: float, d_th: float, eps_d: float) -> Tuple[float, str]:
    if not d_th > 0:
        raise ValueError(f"d_th must be > 0, got {d_th}")
    if not 0.0 < eps_d < 1.0:
        raise ValueError(f"eps_d must be in (0, 1), got {eps_d}")

    def feasible(kappa: float) -> bool:
        return _feasible(p, delta_d, d_th, eps_d, kappa)

    kappa_hi = (1.0 - BALL_MARGIN) / d_th
    if feasible(kappa_hi):
        logger.info(f"Curvature threshold limited by the ball: kappa_th={kappa_hi:.6g} 1/m")
        return kappa_hi, "ball"

    kappa_lo = 1e-6 / d_th
    if not feasible(kappa_lo):
        logger.error("Curvature constraint violated even for vanishing curvature")
        raise InfeasibleCurvatureError(f"no feasible curvature below 1/d_th={1.0 / d_th:.6g}")

    candidates = np.linspace(kappa_lo, kappa_hi, KAPPA_SCAN_POINTS)
    flags = [feasible(k) for k in candidates]
    transitions = sum(1 for a, b in zip(flags, flags[1:]) if a != b)
    if transitions != 1:
        return _dense_scan(feasible, d_th), "kl"

    j = flags.index(False)
    lo, hi = float(candidates[j - 1]), float(candidates[j])
    while hi - lo > BISECTION_RTOL * hi:
        if not feasible(lo) or feasible(hi):
            return _dense_scan(feasible, d_th), "kl"
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    logger.info(f"Curvature threshold: kappa_th={lo:.6g} 1/m (KL constraint binding)")
    return lo, "kl"


def _dense_scan(feasible, d_th: float) -> float:
    logger.warning(f"Curvature feasibility is not monotone, falling back to a {KAPPA_SCAN_POINTS}-point scan")
    grid = np.arange(1, KAPPA_SCAN_POINTS + 1) / (KAPPA_SCAN_POINTS + 1) / d_th
    ok = [k for k in grid if feasible(k)]
    if not ok:
        raise InfeasibleCurvatureError("dense curvature scan found no feasible value")
    return float(max(ok))


def curvature_threshold(p: ChannelParams, delta_d: float, d_th: float, eps_d: float) -> float:
    """
    Largest curvature kappa < 1/d_th with max_phi h_opt(kappa, phi) <= eps_d

    Raises:
        InfeasibleCurvatureError: when even vanishing curvature is infeasible
    """
    return _curvature_search(p, delta_d, d_th, eps_d)[0]


def curvature_is_feasible(p: ChannelParams, delta_d: float, d_th: float, eps_d: float, kappa: float) -> bool:
    """Feasibility of a single curvature value (False at or above 1/d_th)."""
    if kappa * d_th >= 1.0:
        return False
    return _feasible(p, delta_d, d_th, eps_d, kappa)


def kl_stats_for_circle(p: ChannelParams, kappa: float, delta_d: float, d_th: float) -> KlStats:
    """Three-point KL statistics on a circle of curvature kappa at the worst phi."""
    if kappa * d_th >= 1.0:
        raise ValueError(f"kappa={kappa} violates kappa < 1/d_th")
    if kappa <= 0.0:
        return KlStats(0.0, 0.0, 0.0)
    phi, _ = max_h_opt(p, delta_d, d_th, kappa)
    if phi <= 0.0:
        return KlStats(0.0, 0.0, 0.0)
    radius = 1.0 / kappa
    delta_phi = 2.0 * math.asin(kappa * delta_d / 2.0)
    d1 = 2.0 * radius * math.sin(delta_phi / 2.0)
    d1r = 2.0 * radius * math.sin(phi / 2.0)
    dr = 2.0 * radius * math.sin((phi + delta_phi) / 2.0)
    return three_point_kl(p, d1, dr, d1r)


def circle_history_kl(p: ChannelParams, kappa: float, delta_d: float, d_th: float) -> KlStats:
    """KL statistics of dropping every in-ball history point on a circle of curvature kappa."""
    if kappa <= 0.0 or kappa * d_th >= 1.0:
        raise ValueError(f"kappa must be in (0, 1/d_th), got {kappa}")
    radius = 1.0 / kappa
    step = 2.0 * math.asin(kappa * delta_d / 2.0)
    n_max = int(math.ceil(math.pi / step))
    angles = -step * np.arange(1, n_max)
    history = radius * np.column_stack((np.cos(angles), np.sin(angles)))
    current = np.array([radius, 0.0])
    inside = np.linalg.norm(history - current, axis=1) <= d_th
    # the ball is left once and not re-entered for kappa < 1/d_th
    n_in = int(np.argmin(inside)) if not inside.all() else inside.size
    if n_in < 2:
        return KlStats(0.0, 0.0, 0.0)
    return history_kl(p, current, history[:n_in])


# ---------------- Certification ----------------
@dataclass
class Certification:
    """Approximately-Markovian verdict with diagnostics"""
    certified: bool
    tolerance: MarkovTolerance
    kappa_max: float
    curvature_ok: bool
    loop: LoopVerdict
    reasons: List[str] = field(default_factory=list)

    @property
    def margin(self) -> float:
        return self.tolerance.kappa_th - self.kappa_max

    def to_dict(self) -> dict:
        out = {"certified": self.certified}
        out.update(self.tolerance.to_dict())
        out.update({
            "kappa_max_per_m": self.kappa_max,
            "kappa_margin_per_m": self.margin,
            "curvature_ok": self.curvature_ok,
            "loop": self.loop.to_dict(),
            "reasons": list(self.reasons),
        })
        return out


def certify_path(path: DiscretizedPath, p: ChannelParams, eps_m: float, eps_sigma: float,
                 tolerance: Optional[MarkovTolerance] = None) -> Certification:
    """
    Decide whether a path is approximately-Markovian

    Certified iff the pointwise curvature stays below kappa_th and the path is
    d_th-loop-free.
    """
    if tolerance is None:
        tolerance = MarkovTolerance.derive(p, path.delta_d, eps_m, eps_sigma)
    kappa_max = curvature_profile(path).kappa_max
    curvature_ok = kappa_max < tolerance.kappa_th
    loop = is_dth_loop_free(path, tolerance.d_th, kappa_max)
    reasons = []
    if not curvature_ok:
        reasons.append(f"curvature {kappa_max:.4g} 1/m exceeds kappa_th {tolerance.kappa_th:.4g} 1/m")
    if not loop.loop_free:
        if loop.reason == "reentry":
            reasons.append(f"path re-enters the d_th ball: s={loop.first_violation[0]:.3f} m "
                           f"revisits s={loop.first_violation[1]:.3f} m")
        else:
            reasons.append("curvature too large for the loop-freedom check")
    certified = curvature_ok and loop.loop_free
    logger.info(f"Path certification: certified={certified}, kappa_max={kappa_max:.4g}, "
                f"kappa_th={tolerance.kappa_th:.4g}, d_th={tolerance.d_th:.4g}")
    return Certification(certified, tolerance, kappa_max, curvature_ok, loop, reasons)

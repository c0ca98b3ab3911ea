"""
Monte Carlo ground truth

Exact joint-Gaussian shadowing over Euclidean inter-point distances, i.i.d.
Rician multipath, rejection sampling of the start condition and empirical
first-crossing statistics. Without multipath the crossing check can include
Brownian-bridge crossings between grid points, which is what the continuous
field does and what the Volterra density describes.

Randomness: numpy Generator(Philox); chunk c draws from
SeedSequence(seed, spawn_key=(c,)), so results depend on (seed, chunk_trials)
only and not on the worker count.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple, Union

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from .channel_model import ChannelParams, path_loss_point, shadowing_cov
from .errors import RejectionSamplingError, SingularCovarianceError
from .fpd_multipath import FirstPassagePmf
from .fpd_volterra import FpdDensity
from .path_geometry import DiscretizedPath

logger = logging.getLogger(__name__)

JITTER = 1e-10
MIN_ACCEPTANCE = 1e-3
MONITORING = ("discrete", "bridge")


def make_rng(seed: int, chunk: Optional[int] = None) -> np.random.Generator:
    ss = np.random.SeedSequence(seed) if chunk is None else np.random.SeedSequence(seed, spawn_key=(chunk,))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class McConfig:
    """
    Attributes:
        epsilon: start condition Gamma_0 < gamma_th - epsilon (0 means Gamma_0 < gamma_th)
        monitoring: "discrete" checks the grid points only; "bridge" also counts
            Brownian-bridge crossings between consecutive points (no multipath)
    """
    trials: int
    seed: int
    horizon_steps: int
    epsilon: float = 0.0
    chunk_trials: int = 2000
    max_workers: int = 1
    monitoring: str = "discrete"

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.horizon_steps < 1:
            raise ValueError("horizon_steps must be >= 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.chunk_trials < 1 or self.max_workers < 1:
            raise ValueError("chunk_trials and max_workers must be >= 1")
        if self.monitoring not in MONITORING:
            raise ValueError(f"monitoring must be one of {MONITORING}, got {self.monitoring!r}")


@dataclass(frozen=True)
class EmpiricalFpd:
    """
    Per-trial first-crossing steps (-1 for trials that never connect on the horizon)
    """
    trial_steps: np.ndarray
    delta_d: float
    horizon_steps: int

    @property
    def trials(self) -> int:
        return int(self.trial_steps.size)

    @property
    def censored_count(self) -> int:
        return int(np.count_nonzero(self.trial_steps < 0))

    @property
    def crossing_distances(self) -> np.ndarray:
        return self.trial_steps[self.trial_steps >= 0] * self.delta_d

    def cdf(self, d) -> np.ndarray:
        """Fraction of all trials connected within distance d."""
        sorted_d = np.sort(self.crossing_distances)
        tol = 1e-9 * self.delta_d
        counts = np.searchsorted(sorted_d, np.asarray(d, dtype=float) + tol, side='right')
        return counts / self.trials

    def expected_distance(self) -> Tuple[float, float]:
        """(mean crossing distance with censored trials placed at the horizon, censored fraction)"""
        d_max = self.horizon_steps * self.delta_d
        distances = np.where(self.trial_steps < 0, d_max, self.trial_steps * self.delta_d)
        return float(distances.mean()), self.censored_count / self.trials

    def rows(self) -> Iterable[tuple]:
        """(trial, crossing_step, crossing_distance_m, censored) per trial"""
        for i, k in enumerate(self.trial_steps.tolist()):
            if k < 0:
                yield i, "", "", 1
            else:
                yield i, k, k * self.delta_d, 0


def _points_of(path) -> np.ndarray:
    return np.asarray(getattr(path, "points", path), dtype=float)


def shadowing_factor(points: np.ndarray, p: ChannelParams) -> np.ndarray:
    """Lower Cholesky factor of the shadowing covariance at the given points."""
    dist = cdist(points, points)
    off = dist[~np.eye(len(points), dtype=bool)]
    if off.size and np.min(off) <= 1e-12:
        raise SingularCovarianceError("two sampling locations coincide")
    cov = shadowing_cov(p, dist)
    try:
        return linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError:
        logger.warning(f"Covariance factorization failed, retrying with {JITTER:g} sigma^2 jitter")
    try:
        return linalg.cholesky(cov + JITTER * p.sigma_sh_sq * np.eye(len(points)), lower=True)
    except linalg.LinAlgError as e:
        raise SingularCovarianceError(f"shadowing covariance is not positive definite: {e}") from e


def sample_shadowing(path: Union[DiscretizedPath, np.ndarray], p: ChannelParams, seed: int,
                     size: Optional[int] = None) -> np.ndarray:
    """
    Exact draw(s) of the shadowing field at the path points

    Returns:
        (N,) for size None, else (size, N)
    """
    factor = shadowing_factor(_points_of(path), p)
    rng = make_rng(seed)
    z = rng.standard_normal((1 if size is None else size, factor.shape[0]))
    out = z @ factor.T
    return out[0] if size is None else out


def sample_shadowing_ar1(n_points: int, delta_d: float, p: ChannelParams, seed: int,
                         size: Optional[int] = None) -> np.ndarray:
    """AR(1) draw(s) along a straight path: G_{k+1} = rho G_k + sigma sqrt(1 - rho^2) Z_k."""
    rng = make_rng(seed)
    rows = 1 if size is None else size
    rho = math.exp(-delta_d / p.beta_sh)
    innov = p.sigma_sh * math.sqrt(-math.expm1(-2.0 * delta_d / p.beta_sh))
    z = rng.standard_normal((rows, n_points))
    out = np.empty_like(z)
    out[:, 0] = p.sigma_sh * z[:, 0]
    for k in range(1, n_points):
        out[:, k] = rho * out[:, k - 1] + innov * z[:, k]
    return out[0] if size is None else out


def _multipath_db(rng: np.random.Generator, k_ric: float, shape) -> np.ndarray:
    nu = math.sqrt(k_ric / (1.0 + k_ric))
    s = math.sqrt(1.0 / (2.0 * (1.0 + k_ric)))
    x = rng.standard_normal(shape)
    y = rng.standard_normal(shape)
    z = (nu + s * x) ** 2 + (s * y) ** 2
    return 10.0 * np.log10(z)


def sample_multipath_db(k_ric: float, count: int, seed: int) -> np.ndarray:
    """i.i.d. unit-mean Rician power draws, in dB."""
    if k_ric < 0:
        raise ValueError(f"k_ric must be >= 0, got {k_ric}")
    return _multipath_db(make_rng(seed), k_ric, (count,))


class _ChunkSampler:
    def __init__(self, path: DiscretizedPath, p: ChannelParams, cfg: McConfig):
        n = cfg.horizon_steps + 1
        if path.n_points < n:
            raise ValueError(f"path has {path.n_points} points, horizon needs {n}")
        if cfg.monitoring == "bridge" and p.multipath is not None:
            raise ValueError("bridge monitoring needs a channel without multipath")
        points = path.points[:n]
        self.p = p
        self.cfg = cfg
        self.path_loss = path_loss_point(p, points)
        self.factor = shadowing_factor(points, p)
        self.start_limit = p.gamma_th - cfg.epsilon
        # conditional variance of one step, sigma^2 (1 - rho^2) over each chord
        chords = np.linalg.norm(np.diff(points, axis=0), axis=1)
        self.step_var = p.sigma_sh_sq * -np.expm1(-2.0 * chords / p.beta_sh)

    def _bridge_crossings(self, rng: np.random.Generator, gamma: np.ndarray) -> np.ndarray:
        """Draws whether the field crossed gamma_th strictly between consecutive points."""
        gap = np.clip(self.p.gamma_th - gamma, 0.0, None)
        prob = np.exp(-2.0 * gap[:, :-1] * gap[:, 1:] / self.step_var)
        return rng.random(prob.shape) < prob

    def __call__(self, chunk: int):
        """Returns (accepted count, first-crossing steps of accepted trials, -1 if none)."""
        rng = make_rng(self.cfg.seed, chunk)
        n = self.factor.shape[0]
        gamma = rng.standard_normal((self.cfg.chunk_trials, n)) @ self.factor.T
        gamma += self.path_loss
        if self.p.multipath is not None:
            gamma += _multipath_db(rng, self.p.multipath.k_ric, gamma.shape)
        keep = gamma[:, 0] < self.start_limit
        above = gamma[keep, 1:] >= self.p.gamma_th
        if self.cfg.monitoring == "bridge":
            above |= self._bridge_crossings(rng, gamma[keep])
        steps = np.where(above.any(axis=1), np.argmax(above, axis=1) + 1, -1)
        return int(np.count_nonzero(keep)), steps


def empirical_fpd(path: DiscretizedPath, p: ChannelParams, cfg: McConfig) -> EmpiricalFpd:
    """
    Empirical first-crossing steps for cfg.trials accepted trials

    Raises:
        RejectionSamplingError: the start condition is accepted in fewer than 0.1% of draws
    """
    sampler = _ChunkSampler(path, p, cfg)
    collected: List[np.ndarray] = []
    accepted = drawn = 0
    chunk = 0
    with ThreadPoolExecutor(max_workers=cfg.max_workers) as pool:
        while accepted < cfg.trials:
            batch = range(chunk, chunk + cfg.max_workers)
            for n_ok, steps in pool.map(sampler, batch):
                collected.append(steps)
                accepted += n_ok
                drawn += cfg.chunk_trials
            chunk += cfg.max_workers
            if accepted < MIN_ACCEPTANCE * drawn:
                logger.error(f"Start condition accepted in {accepted}/{drawn} draws")
                raise RejectionSamplingError(
                    f"start condition probability {accepted / drawn:.2e} is below {MIN_ACCEPTANCE:g}")
    steps = np.concatenate(collected)[:cfg.trials]
    result = EmpiricalFpd(steps, path.delta_d, cfg.horizon_steps)
    logger.info(f"Monte Carlo finished: {result.trials} trials from {drawn} draws, "
                f"{result.censored_count} censored")
    return result


def ks_distance(empirical: EmpiricalFpd, analytic: Union[FpdDensity, FirstPassagePmf]) -> float:
    """sup |F_emp - F_analytic| over the analytic grid."""
    return float(np.max(np.abs(empirical.cdf(analytic.distances) - analytic.cdf)))

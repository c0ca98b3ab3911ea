"""
Planar paths: arc-length resampling, discrete curvature and the ball-geometry
checks that decide whether in-ball history can be ignored.

The operator sits at the origin; all coordinates are meters.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import PathError

logger = logging.getLogger(__name__)

SPACING_RTOL = 1e-6
# raw samples per output step used by the analytic generators
_OVERSAMPLE = 40


@dataclass(frozen=True)
class DiscretizedPath:
    """
    Arc-length uniform polyline

    Attributes:
        points: (N, 2) coordinates
        delta_d: arc-length step
        cumulative_s: arc length of every point, s[0] = 0
    """
    points: np.ndarray
    delta_d: float
    cumulative_s: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        s = np.asarray(self.cumulative_s, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise PathError(f"points must have shape (N, 2), got {pts.shape}")
        if pts.shape[0] < 3:
            raise PathError("a discretized path needs at least 3 points")
        if not self.delta_d > 0:
            raise PathError(f"delta_d must be > 0, got {self.delta_d}")
        if s.shape != (pts.shape[0],) or np.any(np.diff(s) <= 0):
            raise PathError("cumulative_s must be strictly increasing, one value per point")
        if not np.allclose(np.diff(s), self.delta_d, rtol=SPACING_RTOL, atol=0.0):
            raise PathError("arc-length spacing is not uniform")
        chords = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if np.any(chords > self.delta_d * (1.0 + SPACING_RTOL)):
            raise PathError("consecutive points are further apart than delta_d")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "cumulative_s", s)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def length(self) -> float:
        return float(self.cumulative_s[-1])

    def distances_to_operator(self) -> np.ndarray:
        return np.linalg.norm(self.points, axis=1)

    def truncated(self, n_points: int) -> "DiscretizedPath":
        """First n_points points of the path."""
        if not 3 <= n_points <= self.n_points:
            raise PathError(f"cannot truncate a {self.n_points}-point path to {n_points} points")
        return DiscretizedPath(self.points[:n_points], self.delta_d, self.cumulative_s[:n_points])

    def transformed(self, rotation: float = 0.0, offset: Sequence[float] = (0.0, 0.0)) -> "DiscretizedPath":
        """Rigidly moved copy (rotation in radians about the origin, then translation)."""
        c, s = math.cos(rotation), math.sin(rotation)
        rot = np.array([[c, -s], [s, c]])
        return DiscretizedPath(self.points @ rot.T + np.asarray(offset, dtype=float), self.delta_d,
                               self.cumulative_s.copy())


@dataclass(frozen=True)
class CurvatureProfile:
    kappa: np.ndarray
    kappa_max: float


@dataclass(frozen=True)
class LoopVerdict:
    """
    Result of the loop-freedom check

    reason is "ok", "curvature" (kappa_max >= 1/d_th) or "reentry";
    first_violation holds (s_current, s_past) of the first offending pair.
    """
    loop_free: bool
    reason: str
    first_violation: Optional[Tuple[float, float]] = None
    arc_bound: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "loop_free": self.loop_free,
            "reason": self.reason,
            "first_violation_m": list(self.first_violation) if self.first_violation else None,
            "arc_bound_m": self.arc_bound,
        }


# ---------------- Resampling ----------------
def resample_by_arc_length(raw, delta_d: float) -> DiscretizedPath:
    """
    Resample an ordered polyline at uniform arc length

    Output points lie on the piecewise-linear interpolant of raw at
    s = 0, delta_d, 2 delta_d, ... up to the total length.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2 or raw.shape[1] != 2 or raw.shape[0] < 2:
        raise PathError("raw path must be an (N, 2) array with N >= 2")
    if not delta_d > 0:
        raise PathError(f"delta_d must be > 0, got {delta_d}")
    seg = np.linalg.norm(np.diff(raw, axis=0), axis=1)
    if np.any(seg <= 0.0):
        idx = int(np.argmin(seg))
        raise PathError(f"duplicate consecutive points at index {idx}")
    s_raw = np.concatenate(([0.0], np.cumsum(seg)))
    total = float(s_raw[-1])
    if delta_d > total * (1.0 + 1e-12):
        raise PathError(f"delta_d={delta_d} exceeds the path length {total:.6g}")
    n_steps = int(math.floor(total / delta_d * (1.0 + 1e-9)))
    s_out = np.arange(n_steps + 1) * delta_d
    s_query = np.minimum(s_out, total)
    x = np.interp(s_query, s_raw, raw[:, 0])
    y = np.interp(s_query, s_raw, raw[:, 1])
    if n_steps + 1 < 3:
        raise PathError("path too short for delta_d: fewer than 3 resampled points")
    return DiscretizedPath(np.column_stack((x, y)), float(delta_d), s_out)


def _polar_curve(radius_fn, theta_range: Tuple[float, float], delta_d: float) -> np.ndarray:
    t0, t1 = float(theta_range[0]), float(theta_range[1])
    if t0 == t1:
        raise PathError("theta_range must not be empty")
    theta = np.linspace(t0, t1, 2001)
    r = radius_fn(theta)
    if np.any(r <= 0):
        raise PathError("spiral radius must stay positive over theta_range")
    pts = np.column_stack((r * np.cos(theta), r * np.sin(theta)))
    approx_len = float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))
    n_raw = max(2001, int(math.ceil(approx_len / delta_d)) * _OVERSAMPLE)
    theta = np.linspace(t0, t1, n_raw)
    r = radius_fn(theta)
    return np.column_stack((r * np.cos(theta), r * np.sin(theta)))


# ---------------- Generators ----------------
def straight_path(d_src: float, theta_src: float, length: float, delta_d: float) -> DiscretizedPath:
    """Straight path starting at (d_src, 0), heading theta_src clockwise from the operator direction."""
    if not d_src > 0 or not length > 0:
        raise PathError("d_src and length must be > 0")
    start = np.array([d_src, 0.0])
    heading = np.array([-math.cos(theta_src), math.sin(theta_src)])
    return resample_by_arc_length(np.vstack((start, start + length * heading)), delta_d)


def arch_spiral(a: float, b: float, theta_range: Tuple[float, float], delta_d: float) -> DiscretizedPath:
    """Archimedean spiral r = a + b theta."""
    return resample_by_arc_length(_polar_curve(lambda t: a + b * t, theta_range, delta_d), delta_d)


def log_spiral(a: float, b: float, theta_range: Tuple[float, float], delta_d: float) -> DiscretizedPath:
    """Logarithmic spiral r = a exp(b theta)."""
    return resample_by_arc_length(_polar_curve(lambda t: a * np.exp(b * t), theta_range, delta_d), delta_d)


def exp_spiral(a: float, b: float, theta_range: Tuple[float, float], delta_d: float) -> DiscretizedPath:
    """Spiral r = a + b exp(theta)."""
    return resample_by_arc_length(_polar_curve(lambda t: a + b * np.exp(t), theta_range, delta_d), delta_d)


def circle_path(radius: float, center: Sequence[float], arc_length: float, delta_d: float,
                start_angle: float = 0.0) -> DiscretizedPath:
    """Counter-clockwise circular arc of the given length."""
    if not radius > 0 or not arc_length > 0:
        raise PathError("radius and arc_length must be > 0")
    n_raw = max(2001, int(math.ceil(arc_length / delta_d)) * _OVERSAMPLE)
    phi = start_angle + np.linspace(0.0, arc_length / radius, n_raw)
    cx, cy = float(center[0]), float(center[1])
    raw = np.column_stack((cx + radius * np.cos(phi), cy + radius * np.sin(phi)))
    return resample_by_arc_length(raw, delta_d)


def load_waypoints(csv_path) -> np.ndarray:
    """
    Read a waypoint CSV with header x_m,y_m

    Raises:
        PathError: missing header, wrong columns or non-numeric rows
    """
    csv_path = Path(csv_path)
    with open(csv_path, 'r', encoding='utf-8', newline='') as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["x_m", "y_m"]:
            raise PathError(f"{csv_path}: header must be 'x_m,y_m', got {header}")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 2:
                raise PathError(f"{csv_path}:{line_no}: expected 2 columns, got {len(row)}")
            try:
                rows.append((float(row[0]), float(row[1])))
            except ValueError as e:
                raise PathError(f"{csv_path}:{line_no}: {e}") from e
    if len(rows) < 2:
        raise PathError(f"{csv_path}: at least 2 waypoints are required")
    return np.asarray(rows, dtype=float)


# ---------------- Curvature ----------------
def curvature_profile(path: DiscretizedPath) -> CurvatureProfile:
    """kappa_i = |r_{i-1} - 2 r_i + r_{i+1}| / delta_d^2; ends copy the nearest one-sided stencil."""
    r = path.points
    second = r[:-2] - 2.0 * r[1:-1] + r[2:]
    inner = np.linalg.norm(second, axis=1) / path.delta_d ** 2
    kappa = np.concatenate(([inner[0]], inner, [inner[-1]]))
    return CurvatureProfile(kappa=kappa, kappa_max=float(np.max(kappa)))


# ---------------- Ball geometry ----------------
def max_ball_segment_length(kappa: float, d_th: float) -> float:
    """
    Longest arc a path with curvature <= kappa can spend inside a radius-d_th ball
    before leaving it: asin(kappa d_th) / kappa.
    """
    if not d_th > 0:
        raise ValueError(f"d_th must be > 0, got {d_th}")
    if kappa < 0:
        raise ValueError(f"kappa must be >= 0, got {kappa}")
    if kappa * d_th >= 1.0:
        raise ValueError(f"kappa={kappa} violates kappa < 1/d_th = {1.0 / d_th}")
    if kappa == 0.0:
        return float(d_th)
    return float(math.asin(kappa * d_th) / kappa)


def segment_inside_ball_length(path: DiscretizedPath, index: int, d_th: float) -> float:
    """Backward arc length from point index until the path first leaves the d_th ball around it."""
    center = path.points[index]
    dist = np.linalg.norm(path.points[:index + 1][::-1] - center, axis=1)
    outside = np.nonzero(dist > d_th)[0]
    last_inside = (outside[0] - 1) if outside.size else index
    return float(path.cumulative_s[index] - path.cumulative_s[index - last_inside])


def is_dth_loop_free(path: DiscretizedPath, d_th: float, kappa_max: float) -> LoopVerdict:
    """
    Check that backward travel never turns back into, nor re-enters, the d_th ball

    Every index pair closer than d_th in space must be within the arc-length
    bound asin(kappa_max d_th)/kappa_max of each other. Close pairs come from
    an exact KD-tree range query over all points.
    """
    if kappa_max * d_th >= 1.0:
        logger.info(f"Loop check failed at precondition: kappa_max={kappa_max:.4g} >= 1/d_th={1.0 / d_th:.4g}")
        return LoopVerdict(False, "curvature")
    bound = max_ball_segment_length(kappa_max, d_th)
    pairs = cKDTree(path.points).query_pairs(d_th, output_type='ndarray')
    if pairs.size:
        i = pairs.max(axis=1)
        j = pairs.min(axis=1)
        sep = path.cumulative_s[i] - path.cumulative_s[j]
        bad = sep > bound * (1.0 + 1e-12)
        if np.any(bad):
            order = np.lexsort((j[bad], i[bad]))
            k = order[0]
            first = (float(path.cumulative_s[i[bad][k]]), float(path.cumulative_s[j[bad][k]]))
            logger.info(f"Loop check failed: re-entry between s={first[1]:.3f} m and s={first[0]:.3f} m")
            return LoopVerdict(False, "reentry", first, bound)
    return LoopVerdict(True, "ok", None, bound)

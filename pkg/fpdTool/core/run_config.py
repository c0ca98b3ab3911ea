# core/run_config.py
"""
Run configuration: one JSON document per experiment

All keys carry their unit; missing keys take the San Francisco defaults
(delta_d 0.03 m, epsilon 0.1 dB, gamma_th -110 dB, 60 m horizon).
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from .channel_model import ChannelParams, Rician, StraightGeometry
from .errors import ConfigError, PathError
from .path_geometry import (DiscretizedPath, arch_spiral, circle_path, exp_spiral, load_waypoints,
                            log_spiral, resample_by_arc_length, straight_path)

logger = logging.getLogger(__name__)

# kind -> (required keys, optional keys with defaults)
_PATH_KINDS: Dict[str, tuple] = {
    "straight": (("d_src_m",), {"theta_src_rad": 0.0}),
    "waypoints": (("file",), {}),
    "arch_spiral": (("a_m", "b_m", "theta_range_rad"), {}),
    "log_spiral": (("a_m", "b", "theta_range_rad"), {}),
    "exp_spiral": (("a_m", "b_m", "theta_range_rad"), {}),
    "circle": (("radius_m", "center_m", "arc_length_m"), {}),
}

SWEEP_PARAMETERS = ("sigma_sh_sq", "beta_sh", "k_ric")


def _number(section: str, key: str, value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"{section}.{key} must be a finite number, got {value!r}")
    return float(value)


def _check_keys(section: str, data: Dict[str, Any], allowed) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"{section} must be an object")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(unknown)}")


@dataclass(frozen=True)
class PathSpec:
    kind: str = "straight"
    params: Dict[str, Any] = field(default_factory=lambda: {"d_src_m": 550.0, "theta_src_rad": 0.0})

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PathSpec":
        if not isinstance(data, dict) or "kind" not in data:
            raise ConfigError("path must be an object with a 'kind'")
        kind = data["kind"]
        if kind not in _PATH_KINDS:
            raise ConfigError(f"unknown path kind {kind!r}; expected one of {sorted(_PATH_KINDS)}")
        required, optional = _PATH_KINDS[kind]
        body = {k: v for k, v in data.items() if k != "kind"}
        _check_keys("path", body, set(required) | set(optional))
        missing = [k for k in required if k not in body]
        if missing:
            raise ConfigError(f"path of kind {kind!r} is missing {', '.join(missing)}")
        params = dict(optional)
        for key, value in body.items():
            if key == "file":
                if not isinstance(value, str) or not value:
                    raise ConfigError("path.file must be a non-empty string")
                params[key] = value
            elif key in ("theta_range_rad", "center_m"):
                if not isinstance(value, (list, tuple)) or len(value) != 2:
                    raise ConfigError(f"path.{key} must be a two-element list")
                params[key] = [_number("path", key, v) for v in value]
            else:
                params[key] = _number("path", key, value)
        return cls(kind, params)

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"kind": self.kind}
        out.update({k: (list(v) if isinstance(v, (list, tuple)) else v) for k, v in self.params.items()})
        return out


@dataclass(frozen=True)
class Tolerances:
    eps_m: float = 0.001
    eps_sigma: float = 0.001


@dataclass(frozen=True)
class GridSpec:
    """Horizon as d_max_m or n_steps (steps of delta_d); gamma grid for the multipath recursion."""
    d_max_m: Optional[float] = 60.0
    n_steps: Optional[int] = None
    m_points: int = 4096
    span_sigma: float = 8.0


@dataclass(frozen=True)
class McSpec:
    trials: int = 100_000
    seed: int = 20240501
    chunk_trials: Optional[int] = None


@dataclass(frozen=True)
class RunConfig:
    channel: ChannelParams = field(default_factory=ChannelParams)
    path: PathSpec = field(default_factory=PathSpec)
    delta_d: float = 0.03
    epsilon: float = 0.1
    tolerances: Tolerances = field(default_factory=Tolerances)
    grid: GridSpec = field(default_factory=GridSpec)
    mc: McSpec = field(default_factory=McSpec)
    base_dir: Optional[str] = field(default=None, compare=False)

    # ---------------- (de)serialization ----------------
    @classmethod
    def from_dict(cls, data: Dict[str, Any], base_dir: Optional[str] = None) -> "RunConfig":
        _check_keys("config", data, {"k_db", "n_pl", "sigma_sh_sq_db2", "beta_sh_m", "k_ric", "gamma_th_db",
                                     "delta_d_m", "epsilon_db", "path", "tolerances", "grid", "mc"})
        defaults = ChannelParams()
        try:
            k_ric = data.get("k_ric")
            channel = ChannelParams(
                k_db=_number("config", "k_db", data.get("k_db", defaults.k_db)),
                n_pl=_number("config", "n_pl", data.get("n_pl", defaults.n_pl)),
                sigma_sh_sq=_number("config", "sigma_sh_sq_db2", data.get("sigma_sh_sq_db2", defaults.sigma_sh_sq)),
                beta_sh=_number("config", "beta_sh_m", data.get("beta_sh_m", defaults.beta_sh)),
                multipath=None if k_ric is None else Rician(_number("config", "k_ric", k_ric)),
                gamma_th=_number("config", "gamma_th_db", data.get("gamma_th_db", defaults.gamma_th)),
            )
        except ValueError as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"invalid channel parameters: {e}") from e

        path = PathSpec.from_dict(data["path"]) if "path" in data else PathSpec()

        tol = data.get("tolerances", {})
        _check_keys("tolerances", tol, {"eps_m", "eps_sigma"})
        tolerances = Tolerances(**{k: _number("tolerances", k, v) for k, v in tol.items()})

        grid_data = data.get("grid", {})
        _check_keys("grid", grid_data, {"d_max_m", "n_steps", "m_points", "span_sigma"})
        grid_kwargs: Dict[str, Any] = {}
        if "n_steps" in grid_data and grid_data["n_steps"] is not None:
            grid_kwargs["n_steps"] = _integer("grid", "n_steps", grid_data["n_steps"])
            grid_kwargs["d_max_m"] = None
        if grid_data.get("d_max_m") is not None:
            grid_kwargs["d_max_m"] = _number("grid", "d_max_m", grid_data["d_max_m"])
        if "m_points" in grid_data:
            grid_kwargs["m_points"] = _integer("grid", "m_points", grid_data["m_points"])
        if "span_sigma" in grid_data:
            grid_kwargs["span_sigma"] = _number("grid", "span_sigma", grid_data["span_sigma"])
        grid = GridSpec(**grid_kwargs)

        mc_data = data.get("mc", {})
        _check_keys("mc", mc_data, {"trials", "seed", "chunk_trials"})
        mc = McSpec(**{k: (None if v is None else _integer("mc", k, v)) for k, v in mc_data.items()})

        config = cls(channel, path,
                     _number("config", "delta_d_m", data.get("delta_d_m", 0.03)),
                     _number("config", "epsilon_db", data.get("epsilon_db", 0.1)),
                     tolerances, grid, mc, base_dir)
        config.validate()
        return config

    def to_dict(self) -> Dict[str, Any]:
        c = self.channel
        grid: Dict[str, Any] = {"m_points": self.grid.m_points, "span_sigma": self.grid.span_sigma}
        if self.grid.n_steps is not None:
            grid["n_steps"] = self.grid.n_steps
        else:
            grid["d_max_m"] = self.grid.d_max_m
        mc: Dict[str, Any] = {"trials": self.mc.trials, "seed": self.mc.seed}
        if self.mc.chunk_trials is not None:
            mc["chunk_trials"] = self.mc.chunk_trials
        return {
            "k_db": c.k_db,
            "n_pl": c.n_pl,
            "sigma_sh_sq_db2": c.sigma_sh_sq,
            "beta_sh_m": c.beta_sh,
            "k_ric": None if c.multipath is None else c.multipath.k_ric,
            "gamma_th_db": c.gamma_th,
            "delta_d_m": self.delta_d,
            "epsilon_db": self.epsilon,
            "path": self.path.to_dict(),
            "tolerances": {"eps_m": self.tolerances.eps_m, "eps_sigma": self.tolerances.eps_sigma},
            "grid": grid,
            "mc": mc,
        }

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunConfig":
        path = Path(path)
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from e
        config = cls.from_dict(data, base_dir=str(path.resolve().parent))
        logger.info(f"Run configuration loaded: {path}")
        return config

    def save(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, ensure_ascii=False)

    # ---------------- validation ----------------
    def validate(self) -> None:
        if not self.delta_d > 0:
            raise ConfigError("delta_d_m must be > 0")
        if not self.epsilon > 0:
            raise ConfigError("epsilon_db must be > 0")
        if not (self.tolerances.eps_m > 0 and self.tolerances.eps_sigma > 0):
            raise ConfigError("tolerances must be > 0")
        if self.grid.n_steps is None and self.grid.d_max_m is None:
            raise ConfigError("grid needs d_max_m or n_steps")
        if self.grid.n_steps is not None and self.grid.n_steps < 2:
            raise ConfigError("grid.n_steps must be >= 2")
        if self.grid.d_max_m is not None and not self.grid.d_max_m > self.delta_d:
            raise ConfigError("grid.d_max_m must exceed delta_d_m")
        if self.grid.m_points < 16 or self.grid.span_sigma < 8.0:
            raise ConfigError("grid.m_points must be >= 16 and grid.span_sigma >= 8")
        if self.mc.trials < 1 or (self.mc.chunk_trials is not None and self.mc.chunk_trials < 1):
            raise ConfigError("mc.trials and mc.chunk_trials must be >= 1")
        if self.path.kind == "waypoints" and not self.waypoint_file().exists():
            raise ConfigError(f"waypoint file not found: {self.waypoint_file()}")
        if self.path.kind == "straight":
            try:
                StraightGeometry(self.path.params["d_src_m"], self.path.params.get("theta_src_rad", 0.0))
            except ValueError as e:
                raise ConfigError(f"invalid straight path: {e}") from e

    def waypoint_file(self) -> Path:
        file = Path(self.path.params["file"])
        if not file.is_absolute() and self.base_dir:
            file = Path(self.base_dir) / file
        return file

    # ---------------- builders ----------------
    @property
    def horizon_steps(self) -> int:
        """Number of delta_d steps on the horizon, rounded up to an even count."""
        if self.grid.n_steps is not None:
            n = self.grid.n_steps
        else:
            n = int(math.ceil(self.grid.d_max_m / self.delta_d - 1e-9))
        return n + n % 2

    @property
    def horizon_m(self) -> float:
        return self.horizon_steps * self.delta_d

    @property
    def is_straight(self) -> bool:
        return self.path.kind == "straight"

    def straight_geometry(self) -> StraightGeometry:
        return StraightGeometry(self.path.params["d_src_m"], self.path.params.get("theta_src_rad", 0.0))

    def build_path(self) -> DiscretizedPath:
        """Discretized path at delta_d (straight paths are cut at the horizon)."""
        p = self.path.params
        try:
            if self.path.kind == "straight":
                return straight_path(p["d_src_m"], p.get("theta_src_rad", 0.0), self.horizon_m, self.delta_d)
            if self.path.kind == "waypoints":
                return resample_by_arc_length(load_waypoints(self.waypoint_file()), self.delta_d)
            if self.path.kind == "arch_spiral":
                return arch_spiral(p["a_m"], p["b_m"], tuple(p["theta_range_rad"]), self.delta_d)
            if self.path.kind == "log_spiral":
                return log_spiral(p["a_m"], p["b"], tuple(p["theta_range_rad"]), self.delta_d)
            if self.path.kind == "exp_spiral":
                return exp_spiral(p["a_m"], p["b_m"], tuple(p["theta_range_rad"]), self.delta_d)
            return circle_path(p["radius_m"], p["center_m"], p["arc_length_m"], self.delta_d)
        except PathError:
            raise
        except (OSError, ValueError) as e:
            raise ConfigError(f"cannot build path: {e}") from e

    def solver_source(self, path: Optional[DiscretizedPath] = None):
        """Closed-form geometry for straight paths, the discretized path otherwise."""
        if self.is_straight:
            return self.straight_geometry()
        return path if path is not None else self.build_path()

    def with_channel(self, channel: ChannelParams) -> "RunConfig":
        return replace(self, channel=channel)


def _integer(section: str, key: str, value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{section}.{key} must be an integer, got {value!r}")
    return value


@dataclass(frozen=True)
class SweepSpec:
    """One channel parameter swept over a list of values; metric is the expected FPD in meters."""
    parameter: str
    values: List[float]
    metric: str = "expected_fpd_m"

    def __post_init__(self):
        if self.parameter not in SWEEP_PARAMETERS:
            raise ConfigError(f"sweep parameter must be one of {SWEEP_PARAMETERS}, got {self.parameter!r}")
        if not self.values:
            raise ConfigError("sweep values must not be empty")
        if any(not (v > 0 and math.isfinite(v)) for v in self.values):
            raise ConfigError("sweep values must be finite and > 0")

    @classmethod
    def parse(cls, parameter: str, values: str) -> "SweepSpec":
        try:
            parsed = [float(v) for v in values.split(",") if v.strip()]
        except ValueError as e:
            raise ConfigError(f"invalid sweep values {values!r}: {e}") from e
        return cls(parameter, parsed)

    def apply(self, channel: ChannelParams, value: float) -> ChannelParams:
        if self.parameter == "k_ric":
            return channel.with_updates(multipath=Rician(value))
        return channel.with_updates(**{self.parameter: value})

"""
fpd verb: first-passage distance density as CSV (distance_m,pdf_per_m,cdf)

Both modes condition on a start below gamma_th - epsilon. --multipath off
solves the upcrossing Volterra equation; --multipath on runs the J_k
recursion with the Rician cdf (or the unit step when the configuration has
no k_ric).
"""

import csv
import logging
import sys
from contextlib import contextmanager
from typing import Iterable, Optional, Union

import numpy as np

from fpdTool.core.errors import CertificationError, ConfigError
from fpdTool.core.fpd_multipath import FirstPassagePmf, first_passage_pmf, make_gamma_grid
from fpdTool.core.fpd_volterra import FpdDensity, VolterraGrid, solve_upcrossing_fpd
from fpdTool.core.markov_analysis import certify_path
from fpdTool.core.path_geometry import DiscretizedPath
from fpdTool.core.run_config import RunConfig

from .main_cli import EXIT_OK, finish_report

logger = logging.getLogger(__name__)

CSV_HEADER = ("distance_m", "pdf_per_m", "cdf")


def resolve_mode(config: RunConfig, requested: str) -> str:
    if requested == "auto":
        return "on" if config.channel.multipath is not None else "off"
    return requested


def certified_path(config: RunConfig, force: bool) -> DiscretizedPath:
    """
    Build the configured path; curved paths must pass the approximately-Markovian check

    Raises:
        CertificationError: the path is rejected and force is not set
        ConfigError: the path is shorter than the horizon
    """
    path = config.build_path()
    if path.length < config.horizon_m * (1.0 - 1e-9):
        raise ConfigError(f"path length {path.length:.4g} m is shorter than the horizon {config.horizon_m:.4g} m")
    if config.is_straight:
        return path
    cert = certify_path(path, config.channel, config.tolerances.eps_m, config.tolerances.eps_sigma)
    if not cert.certified:
        if not force:
            raise CertificationError("path is not approximately-Markovian: " + "; ".join(cert.reasons))
        logger.warning("Uncertified path used because of --force: " + "; ".join(cert.reasons))
    return path


def compute_fpd(config: RunConfig, mode: str, path: Optional[DiscretizedPath] = None
                ) -> Union[FpdDensity, FirstPassagePmf]:
    source = config.solver_source(path)
    if mode == "off":
        p = config.channel.without_multipath()
        grid = VolterraGrid(config.horizon_m, config.horizon_steps)
        return solve_upcrossing_fpd(p, source, config.epsilon, grid)
    gamma_grid = make_gamma_grid(config.channel, config.grid.m_points, config.grid.span_sigma)
    return first_passage_pmf(config.channel, source, config.horizon_steps, config.delta_d, gamma_grid,
                             epsilon=config.epsilon)


def fpd_rows(result: Union[FpdDensity, FirstPassagePmf]) -> Iterable[tuple]:
    if isinstance(result, FirstPassagePmf):
        pdf = result.pmf / result.delta_d
    else:
        pdf = result.pdf
    for d, f, c in zip(result.distances, pdf, np.asarray(result.cdf)):
        yield float(d), float(f), float(c)


@contextmanager
def open_output(out: Optional[str]):
    if out:
        with open(out, "w", encoding="utf-8", newline="") as f:
            yield f
    else:
        yield sys.stdout


def write_csv(out: Optional[str], header, rows) -> None:
    with open_output(out) as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in row])


def run(config: RunConfig, args) -> int:
    mode = resolve_mode(config, args.multipath)
    path = certified_path(config, args.force)
    result = compute_fpd(config, mode, path)
    write_csv(args.out, CSV_HEADER, fpd_rows(result))
    mean, residual = result.expected_distance()
    logger.info(f"FPD ({mode}): expected distance {mean:.4f} m, residual mass {residual:.3e}")
    finish_report(args, "fpd", {
        "multipath": mode,
        "horizon_m": config.horizon_m,
        "steps": config.horizon_steps,
        "expected_fpd_m": mean,
        "residual_mass": residual,
    }, config)
    return EXIT_OK

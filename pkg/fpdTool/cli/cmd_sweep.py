"""
sweep verb: expected first-passage distance over a channel parameter

CSV columns value,expected_fpd_m,residual_mass in the order of --values.
A sweep whose expected FPD moves against EXPECTED_TREND exits 4 after the
CSV and report are written, unless --no-trend-check is given.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Tuple

import numpy as np

from fpdTool.core.errors import TrendViolationError
from fpdTool.core.properties_config import get_properties_config
from fpdTool.core.run_config import RunConfig, SweepSpec

from .cmd_fpd import certified_path, compute_fpd, resolve_mode, write_csv
from .main_cli import EXIT_OK, finish_report

logger = logging.getLogger(__name__)

CSV_HEADER = ("value", "expected_fpd_m", "residual_mass")

# expected FPD trend as the parameter grows: -1 decreasing, +1 increasing
EXPECTED_TREND = {"sigma_sh_sq": -1, "beta_sh": 1, "k_ric": 1}


def is_monotone(values: List[float], metric: List[float], trend: int) -> bool:
    order = np.argsort(values)
    diffs = np.diff(np.asarray(metric)[order]) * trend
    return bool(np.all(diffs >= -1e-9 * max(1.0, float(np.max(np.abs(metric))))))


def run(config: RunConfig, args) -> int:
    spec = SweepSpec.parse(args.param, args.values)
    mode = resolve_mode(config, args.multipath)
    if spec.parameter == "k_ric" and mode == "off":
        logger.warning("k_ric sweep without multipath: every value gives the same result")
    path = certified_path(config, args.force)

    def evaluate(value: float) -> Tuple[float, float]:
        swept = config.with_channel(spec.apply(config.channel, value))
        return compute_fpd(swept, mode, path).expected_distance()

    workers = min(get_properties_config().get_sweep_max_workers(), len(spec.values))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(evaluate, spec.values))

    rows = [(v, mean, residual) for v, (mean, residual) in zip(spec.values, results)]
    write_csv(args.out, CSV_HEADER, rows)

    means = [mean for _, mean, _ in rows]
    monotone = is_monotone(spec.values, means, EXPECTED_TREND[spec.parameter])
    finish_report(args, "sweep", {
        "parameter": spec.parameter,
        "multipath": mode,
        "values": spec.values,
        "expected_fpd_m": means,
        "residual_mass": [r for _, _, r in rows],
        "monotone": monotone,
    }, config)
    if not monotone:
        message = f"expected FPD is not monotone in {spec.parameter}: {means}"
        if args.no_trend_check:
            logger.warning(message)
        else:
            logger.error(message)
            raise TrendViolationError(message)
    return EXIT_OK

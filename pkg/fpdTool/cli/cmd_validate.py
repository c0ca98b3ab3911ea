"""
validate verb: analytic first-passage cdf against the Monte Carlo oracle

Prints a JSON report with the Kolmogorov-Smirnov distance; exit 0 when it
is below --threshold, 4 otherwise.
"""

import logging

from fpdTool.core.mc_oracle import McConfig, empirical_fpd, ks_distance
from fpdTool.core.properties_config import get_properties_config
from fpdTool.core.run_config import RunConfig

from .cmd_fpd import certified_path, compute_fpd, resolve_mode, write_csv
from .main_cli import EXIT_NUMERICAL, EXIT_OK, emit_json, finish_report

logger = logging.getLogger(__name__)

TRIALS_HEADER = ("trial", "crossing_step", "crossing_distance_m", "censored")


def run(config: RunConfig, args) -> int:
    mode = resolve_mode(config, args.multipath)
    path = certified_path(config, args.force)
    analytic = compute_fpd(config, mode, path)

    # off: continuous field, crossings between grid points count (Volterra)
    # on: multipath drawn per step, crossings only at grid points (recursion)
    channel = config.channel.without_multipath() if mode == "off" else config.channel
    cfg = McConfig(
        trials=args.trials or config.mc.trials,
        seed=config.mc.seed,
        horizon_steps=config.horizon_steps,
        epsilon=config.epsilon,
        chunk_trials=config.mc.chunk_trials or get_properties_config().get_chunk_trials(),
        max_workers=max(1, args.workers),
        monitoring="bridge" if mode == "off" else "discrete",
    )
    empirical = empirical_fpd(path, channel, cfg)
    if args.trials_out:
        write_csv(args.trials_out, TRIALS_HEADER, empirical.rows())

    ks = ks_distance(empirical, analytic)
    passed = ks < args.threshold
    mean, residual = analytic.expected_distance()
    report = {
        "multipath": mode,
        "monitoring": cfg.monitoring,
        "ks": ks,
        "threshold": args.threshold,
        "pass": passed,
        "trials": empirical.trials,
        "censored": empirical.censored_count,
        "seed": cfg.seed,
        "horizon_m": config.horizon_m,
        "expected_fpd_m": mean,
        "residual_mass": residual,
    }
    logger.info(f"Validation ({mode}): KS {ks:.4f} vs threshold {args.threshold}, pass={passed}")
    finish_report(args, "validate", report, config)
    emit_json(report)
    return EXIT_OK if passed else EXIT_NUMERICAL

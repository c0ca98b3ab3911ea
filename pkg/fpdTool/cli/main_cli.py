"""
Command-line front end

    python -m fpdTool.main certify  --config run.json
    python -m fpdTool.main fpd      --config run.json --multipath off --out fpd.csv
    python -m fpdTool.main validate --config run.json --trials 20000
    python -m fpdTool.main sweep    --config run.json --param beta_sh --values 5,12.92,25

Exit codes: 0 ok, 2 certification rejected, 3 configuration error,
4 numerical or oracle failure.
"""

import argparse
import json
import logging
import sys
from typing import Any, Dict, List, Optional

from fpdTool.core.errors import ConfigError, FpdToolError
from fpdTool.core.properties_config import get_properties_config, reset_properties_config
from fpdTool.core.report import write_report
from fpdTool.core.run_config import SWEEP_PARAMETERS, RunConfig
from fpdTool.core.run_store import RunStore

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_REJECTED = 2
EXIT_CONFIG = 3
EXIT_NUMERICAL = 4


class _Parser(argparse.ArgumentParser):
    """argparse reports usage errors as configuration errors (exit 3)"""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", required=True, help="run configuration JSON")
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--force", action="store_true", help="skip the approximately-Markovian certificate")
    common.add_argument("--store", action="store_true", help="persist the JSON report in the run store")
    common.add_argument("--report", help="write an HTML report to this file")
    common.add_argument("--properties", help="application.properties override")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true")
    verbosity.add_argument("-q", "--quiet", action="store_true")

    parser = _Parser(prog="fpdtool", description="First-passage distance to wireless connectivity")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("certify", parents=[common], help="approximately-Markovian path certificate")

    fpd = sub.add_parser("fpd", parents=[common], help="first-passage distance density as CSV")
    fpd.add_argument("--multipath", choices=("on", "off", "auto"), default="auto")

    validate = sub.add_parser("validate", parents=[common], help="analytic result vs Monte Carlo")
    validate.add_argument("--multipath", choices=("on", "off", "auto"), default="auto")
    validate.add_argument("--trials", type=int, help="override mc.trials")
    validate.add_argument("--threshold", type=float, default=0.02, help="KS pass threshold")
    validate.add_argument("--workers", type=int, default=1, help="Monte Carlo worker threads")
    validate.add_argument("--trials-out", help="raw per-trial CSV")

    sweep = sub.add_parser("sweep", parents=[common], help="expected FPD over a parameter sweep")
    sweep.add_argument("--param", required=True, choices=SWEEP_PARAMETERS)
    sweep.add_argument("--values", required=True, help="comma separated values")
    sweep.add_argument("--multipath", choices=("on", "off", "auto"), default="auto")
    sweep.add_argument("--no-trend-check", action="store_true",
                       help="report a non-monotone sweep without failing")
    return parser


def _configure_logging(args) -> None:
    level = get_properties_config().get_logging_level()
    if getattr(args, "verbose", False):
        level = "DEBUG"
    elif getattr(args, "quiet", False):
        level = "WARNING"
    logging.basicConfig(level=getattr(logging, level, logging.INFO), stream=sys.stderr, force=True,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def emit_json(report: Dict[str, Any]) -> None:
    print(json.dumps(report, indent=2, ensure_ascii=False))


def finish_report(args, kind: str, report: Dict[str, Any], config: RunConfig) -> Dict[str, Any]:
    """Store and/or render the JSON report when asked to."""
    if args.store or get_properties_config().is_auto_store():
        with RunStore() as store:
            report["run_index"] = store.store_report(kind, report)
    if args.report:
        write_report(args.report, kind, report, config.to_dict())
    return report


def main(argv: Optional[List[str]] = None) -> int:
    from fpdTool.cli import cmd_certify, cmd_fpd, cmd_sweep, cmd_validate

    handlers = {
        "certify": cmd_certify.run,
        "fpd": cmd_fpd.run,
        "validate": cmd_validate.run,
        "sweep": cmd_sweep.run,
    }
    try:
        args = build_parser().parse_args(argv)
        if args.properties:
            reset_properties_config(args.properties)
        _configure_logging(args)
        config = RunConfig.load(args.config)
        return handlers[args.command](config, args)
    except FpdToolError as e:
        logger.error(f"{type(e).__name__}: {e}")
        emit_json({"error": str(e), "type": type(e).__name__})
        return e.exit_code
    except Exception as e:
        logger.exception("Unexpected failure")
        emit_json({"error": str(e), "type": type(e).__name__})
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

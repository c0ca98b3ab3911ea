"""certify verb: approximately-Markovian verdict as JSON (exit 0 certified, 2 rejected)"""

import logging

from fpdTool.core.markov_analysis import certify_path
from fpdTool.core.run_config import RunConfig

from .main_cli import EXIT_OK, EXIT_REJECTED, emit_json, finish_report

logger = logging.getLogger(__name__)


def run(config: RunConfig, args) -> int:
    path = config.build_path()
    cert = certify_path(path, config.channel, config.tolerances.eps_m, config.tolerances.eps_sigma)
    report = {"path_kind": config.path.kind, "path_length_m": path.length, "n_points": path.n_points}
    report.update(cert.to_dict())
    finish_report(args, "certify", report, config)
    emit_json(report)
    if not cert.certified:
        logger.warning("Path rejected: " + "; ".join(cert.reasons))
        return EXIT_REJECTED
    return EXIT_OK

"""
Exception hierarchy shared by the numerics and the command front end.

Every class carries the process exit code the CLI maps it to.
"""

from __future__ import annotations


class FpdToolError(Exception):
    """Base class for all errors raised by fpdTool."""
    exit_code = 4


# ---------------- Input / configuration ----------------
class ConfigError(FpdToolError, ValueError):
    """Run configuration is malformed or references missing files."""
    exit_code = 3


class PathError(FpdToolError, ValueError):
    """A path cannot be built (duplicate points, step longer than the path...)."""
    exit_code = 3


class CertificationError(FpdToolError):
    """Path is not approximately-Markovian and --force was not given."""
    exit_code = 2


# ---------------- Numerical failures ----------------
class NumericalError(FpdToolError):
    exit_code = 4


class DegenerateGeometryError(NumericalError, ValueError):
    """Robot passes through the operator: log argument below the floor."""


class KlDomainError(NumericalError):
    """sigma_dm^2 >= sigma_hat^2, the KL tolerance analysis breaks down."""


class SingularCovarianceError(NumericalError):
    """Two locations coincide, or a covariance factorization failed."""


class SolverInstabilityError(NumericalError):
    """Marching solver diverged."""


class ConditioningUnderflowError(NumericalError):
    """Probability of the conditioning event underflows."""


class AliasingError(NumericalError):
    """J_k mass reached the edge of the gamma grid."""


class InfeasibleCurvatureError(NumericalError):
    """Curvature constraint is violated even for vanishing curvature."""


class RejectionSamplingError(NumericalError):
    """Monte Carlo conditioning event is too rare for rejection sampling."""


class TrendViolationError(NumericalError):
    """Swept expected FPD does not move in the expected direction."""

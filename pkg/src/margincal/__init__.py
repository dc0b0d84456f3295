"""Safety-margin calibration for design/test/redesign under mixed uncertainty.

The package couples a Gaussian-process model of low-fidelity model error with
a simulated deterministic design process (initial design, future test,
possible redesign) and optimizes the governing safety margins against
analytic redesign-probability and reliability constraints.
"""

__version__ = "0.1.0"


class MargincalError(Exception):
    """Base class for package errors."""


class InputError(MargincalError, ValueError):
    """Invalid argument values (bad shapes, out-of-support points, conflicts)."""


class ConfigError(MargincalError):
    """Malformed or inconsistent run configuration."""


class FitError(MargincalError):
    """Gaussian-process fitting failed (singular covariance after escalation)."""


class InfeasibleError(MargincalError):
    """Constrained optimization found no feasible point."""


class DegenerateTestError(MargincalError):
    """Predictive spread at the test point is too small to standardize."""


class EstimationError(MargincalError):
    """Monte Carlo estimate unusable (too many aborted futures)."""

"""Exception hierarchy shared by the engines and the CLI.

Engines raise; the CLI turns any IrtPrecisionError into an ErrorCard on stderr
and exits with the class's exit code. Business failures never leak tracebacks.
"""

from __future__ import annotations

from typing import Any, Dict

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3


class IrtPrecisionError(Exception):
    """Base error. `violation_type` is the machine-readable tag written to stderr."""

    violation_type: str = "unspecified"
    exit_code: int = 1

    def __init__(self, reason: str, **context: Any) -> None:
        super().__init__(reason)
        self.reason = reason
        self.context: Dict[str, Any] = context


# ─── Input validation (exit 2) ───────────────────────────────────────────────


class InputValidationError(IrtPrecisionError):
    violation_type = "invalid_input"
    exit_code = EXIT_INPUT


class CategoryRangeError(InputValidationError):
    violation_type = "category_range"


class ConfigurationError(InputValidationError):
    violation_type = "invalid_configuration"


class DesignError(ConfigurationError):
    violation_type = "invalid_design"


# ─── Numerical failures (exit 3) ─────────────────────────────────────────────


class NumericalError(IrtPrecisionError):
    violation_type = "numerical_failure"
    exit_code = EXIT_NUMERICAL


class EstimationError(NumericalError):
    violation_type = "estimation_failed"


class NonConvergenceError(NumericalError):
    violation_type = "not_converged"


class InversionError(NumericalError):
    violation_type = "singular_information"

    def __init__(self, reason: str, smallest_eigenvalue: float, **context: Any) -> None:
        super().__init__(reason, smallest_eigenvalue=smallest_eigenvalue, **context)
        self.smallest_eigenvalue = smallest_eigenvalue


class DegenerateMomentsError(NumericalError):
    violation_type = "degenerate_moments"


class EnumerationCapError(NumericalError):
    violation_type = "enumeration_cap_exceeded"

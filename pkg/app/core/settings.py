"""Runtime defaults, overridable from the environment (or a .env file).

Numerical defaults mirror the estimation environment the reliability method
was validated in: 61 rectangular nodes on [-6, 6], EM tolerance 1e-4.
"""

from __future__ import annotations

import os

from dotenv import load_dotenv

from app.core.errors import ConfigurationError

load_dotenv()

# ─── Quadrature / estimation ─────────────────────────────────────────────────

DEFAULT_QUAD_POINTS: int = 61
DEFAULT_QUAD_LO: float = -6.0
DEFAULT_QUAD_HI: float = 6.0

EM_TOLERANCE: float = 1e-4
EM_MAX_ITER: int = 500
NEWTON_STEPS: int = 5

PROB_FLOOR: float = 1e-300

DEFAULT_ALPHA: float = 0.05

# ─── Environment ─────────────────────────────────────────────────────────────

THREADS_ENV = "IRT_PRECISION_THREADS"
LOG_LEVEL_ENV = "IRT_PRECISION_LOG_LEVEL"

ENUM_CAP: int = int(os.environ.get("IRT_PRECISION_ENUM_CAP", "10000000"))
MC_DRAWS: int = int(os.environ.get("IRT_PRECISION_MC_DRAWS", "1000000"))


def resolve_threads(flag: int | None) -> int:
    """--threads wins; otherwise IRT_PRECISION_THREADS; otherwise 1."""
    if flag is not None:
        value = flag
    else:
        raw = os.environ.get(THREADS_ENV, "1")
        try:
            value = int(raw)
        except ValueError:
            raise ConfigurationError(f"{THREADS_ENV} must be an integer, got '{raw}'.")
    if value < 1:
        raise ConfigurationError(f"Thread count must be >= 1, got {value}.")
    return value


def resolve_log_level(verbosity: int) -> str:
    if verbosity >= 2:
        return "DEBUG"
    if verbosity == 1:
        return "INFO"
    return os.environ.get(LOG_LEVEL_ENV, "WARNING").upper()

"""Pydantic v2 schemas for everything that crosses a file boundary.

Item parameters, fit records, reliability reports, simulation designs and
summaries, CLI run configuration and the error card are all strictly typed.
Numeric work happens on numpy arrays inside the engines; these models are
the contract for reading and writing them.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.core.settings import (
    DEFAULT_ALPHA,
    DEFAULT_QUAD_HI,
    DEFAULT_QUAD_LO,
    DEFAULT_QUAD_POINTS,
    EM_MAX_ITER,
    EM_TOLERANCE,
    ENUM_CAP,
    MC_DRAWS,
)

SCHEMA_VERSION = "1.0"

Kind = Literal["prmse", "ctt"]
ModelName = Literal["2pl", "grm"]


# ─── Item parameters ─────────────────────────────────────────────────────────


class ItemSpec(BaseModel):
    """One GRM item in slope-intercept form: logit P(Y >= k) = a*theta + c_k."""

    model_config = ConfigDict(frozen=True)

    a: float
    c: Tuple[float, ...]
    name: Optional[str] = None

    @field_validator("a")
    @classmethod
    def _finite_slope(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError(f"slope must be finite, got {v}")
        return v

    @field_validator("c")
    @classmethod
    def _ordered_intercepts(cls, v: Tuple[float, ...]) -> Tuple[float, ...]:
        if len(v) < 1:
            raise ValueError("an item needs at least one intercept (K >= 2)")
        if not all(math.isfinite(x) for x in v):
            raise ValueError(f"intercepts must be finite, got {list(v)}")
        for upper, lower in zip(v, v[1:]):
            if not upper > lower:
                raise ValueError(f"intercepts must be strictly decreasing, got {list(v)}")
        return v

    @property
    def n_categories(self) -> int:
        return len(self.c) + 1

    @property
    def difficulties(self) -> Optional[Tuple[float, ...]]:
        """b_k = -c_k / a; undefined (None) for a flat item."""
        if self.a == 0:
            return None
        return tuple(-ck / self.a for ck in self.c)


class ItemParams(BaseModel):
    """All items of a test. Item order defines the flat parameter layout."""

    model_config = ConfigDict(frozen=True)

    items: Tuple[ItemSpec, ...]

    @property
    def n_items(self) -> int:
        return len(self.items)

    @property
    def n_categories(self) -> np.ndarray:
        return np.array([it.n_categories for it in self.items], dtype=np.int64)

    @property
    def offsets(self) -> np.ndarray:
        """Start index of each item's block (a_j, c_j1, ...) in the flat vector."""
        k = self.n_categories
        return np.concatenate(([0], np.cumsum(k)[:-1])).astype(np.int64) if len(k) else k

    @property
    def n_params(self) -> int:
        return int(self.n_categories.sum())

    @property
    def slopes(self) -> np.ndarray:
        return np.array([it.a for it in self.items], dtype=float)

    @property
    def item_names(self) -> List[str]:
        return [it.name or f"item{j + 1}" for j, it in enumerate(self.items)]


# ─── Quadrature ──────────────────────────────────────────────────────────────


class GridSpec(BaseModel):
    q_count: int = DEFAULT_QUAD_POINTS
    lo: float = DEFAULT_QUAD_LO
    hi: float = DEFAULT_QUAD_HI


# ─── Fit record (fit.json) ───────────────────────────────────────────────────


class FitRecord(BaseModel):
    """Serialized estimation result. Carries the information matrix so that
    reliability SEs can be reproduced without refitting."""

    schema_version: str = SCHEMA_VERSION
    created_at: str
    model: ModelName
    params: ItemParams
    grid: GridSpec
    n: int
    log_likelihood: float
    converged: bool
    iterations: int
    max_change: Optional[float] = None
    history: List[float] = Field(default_factory=list)
    info_method: str
    info: List[List[float]]


# ─── Reliability ─────────────────────────────────────────────────────────────


class ReliabilityReport(BaseModel):
    kind: Kind
    point: float
    se: float = Field(ge=0.0)
    ci_lo: float
    ci_hi: float
    alpha: float = Field(gt=0.0, lt=1.0)
    n: int
    m: int
    n_quad: int
    jacobian: str = "explicit"
    flags: List[str] = Field(default_factory=list)
    planned_n: Optional[int] = None

    @model_validator(mode="after")
    def _interval_brackets_point(self) -> "ReliabilityReport":
        if not self.ci_lo <= self.point <= self.ci_hi:
            raise ValueError("confidence interval must contain the point estimate")
        return self


class ReliabilityDocument(BaseModel):
    schema_version: str = SCHEMA_VERSION
    created_at: str
    reports: List[ReliabilityReport]


class OracleDocument(BaseModel):
    schema_version: str = SCHEMA_VERSION
    created_at: str
    mode: str
    draws: Optional[int] = None
    n_quad: int
    values: Dict[str, Optional[float]]
    notes: Dict[str, str] = Field(default_factory=dict)


# ─── Simulation ──────────────────────────────────────────────────────────────


class SimDesign(BaseModel):
    """A fully crossed n x m simulation study for one model.

    Difficulty defaults follow the model: 2PL b ~ N(0, 1); GRM b_1 ~ N(-1.5, 0.5^2)
    with successive steps d ~ N(1, 0.2^2).
    """

    model: ModelName
    n_values: List[int]
    m_values: List[int]
    replications: int = Field(ge=1)
    seed: int = 0
    n_categories: Optional[int] = None
    slope_range: Tuple[float, float] = (0.5, 2.0)
    difficulty_mean: Optional[float] = None
    difficulty_sd: Optional[float] = None
    step_mean: float = 1.0
    step_sd: float = 0.2
    alpha: float = Field(default=DEFAULT_ALPHA, gt=0.0, lt=1.0)
    kinds: List[Kind] = Field(default_factory=lambda: ["prmse", "ctt"])
    grid: GridSpec = Field(default_factory=GridSpec)
    em_tol: float = EM_TOLERANCE
    max_iter: int = EM_MAX_ITER
    info_method: Literal["crossprod", "louis"] = "crossprod"
    oracle_mc_draws: int = MC_DRAWS
    enum_cap: int = ENUM_CAP

    @model_validator(mode="after")
    def _resolve_defaults(self) -> "SimDesign":
        lo, hi = self.slope_range
        if not 0 < lo < hi:
            raise ValueError(f"slope range must satisfy 0 < lo < hi, got {self.slope_range}")
        if not self.n_values or not self.m_values:
            raise ValueError("n_values and m_values must be non-empty")
        if min(self.n_values) < 2 or min(self.m_values) < 1:
            raise ValueError("every n must be >= 2 and every m >= 1")
        if self.model == "2pl":
            if self.n_categories not in (None, 2):
                raise ValueError("the 2PL model has exactly two categories")
            self.n_categories = 2
            defaults = (0.0, 1.0)
        else:
            if self.n_categories is None:
                self.n_categories = 5
            if self.n_categories < 2:
                raise ValueError("n_categories must be >= 2")
            defaults = (-1.5, 0.5)
        if self.difficulty_mean is None:
            self.difficulty_mean = defaults[0]
        if self.difficulty_sd is None:
            self.difficulty_sd = defaults[1]
        return self

    @property
    def conditions(self) -> List[Tuple[int, int]]:
        """(n, m) pairs in row-major order: n outer, m inner (table layout)."""
        return [(n, m) for n in self.n_values for m in self.m_values]


class ConditionSummary(BaseModel):
    kind: Kind
    n: int
    m: int
    true: Optional[float] = None
    oracle_mode: str
    est: Optional[float] = None
    rel_bias: Optional[float] = None
    emp_sd: Optional[float] = None
    mean_se: Optional[float] = None
    coverage: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    lb: Optional[float] = None
    ub: Optional[float] = None
    n_used: int = 0
    n_nonconv: int = 0
    n_failed: int = 0
    n_over1: int = 0


class SimSummary(BaseModel):
    schema_version: str = SCHEMA_VERSION
    created_at: str
    design: SimDesign
    coverage_bounds: Tuple[float, float]
    conditions: List[ConditionSummary]
    failure_reasons: Dict[str, int] = Field(default_factory=dict)


# ─── CLI ─────────────────────────────────────────────────────────────────────


class RunConfig(BaseModel):
    """Validated CLI arguments. Paths that must exist are checked before compute.

    Quadrature fields stay None unless given on the command line, so commands
    reading a fit file can fall back to the grid stored in it.
    """

    command: Literal["fit", "score", "reliability", "oracle", "simulate"]
    data: Optional[Path] = None
    fit: Optional[Path] = None
    params: Optional[Path] = None
    design: Optional[Path] = None
    out: Optional[Path] = None
    csv: Optional[Path] = None
    model: ModelName = "grm"
    kind: Literal["prmse", "ctt", "both"] = "both"
    alpha: float = DEFAULT_ALPHA
    quad_points: Optional[int] = None
    quad_lo: Optional[float] = None
    quad_hi: Optional[float] = None
    seed: int = 0
    threads: int = 1
    mode: Literal["enumerate", "mc"] = "enumerate"
    draws: int = MC_DRAWS
    info_method: Literal["crossprod", "louis"] = "crossprod"
    jacobian: Literal["explicit", "total"] = "explicit"
    model_implied: bool = False
    half_width: Optional[float] = None
    tol: float = Field(default=EM_TOLERANCE, gt=0.0)
    max_iter: int = Field(default=EM_MAX_ITER, ge=1)

    @field_validator("alpha")
    @classmethod
    def _alpha_open_unit(cls, v: float) -> float:
        if not 0.0 < v < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {v}")
        return v

    @model_validator(mode="after")
    def _inputs_exist(self) -> "RunConfig":
        required = {
            "fit": ["data"],
            "score": ["fit", "data"],
            "reliability": ["fit", "data"],
            "oracle": ["params"],
            "simulate": ["design"],
        }[self.command]
        for name in required:
            path = getattr(self, name)
            if path is None:
                raise ValueError(f"--{name} is required for '{self.command}'")
            if not path.is_file():
                raise ValueError(f"--{name} file not found: {path}")
        if self.quad_points is not None and self.quad_points < 3:
            raise ValueError(f"--quad-points must be >= 3, got {self.quad_points}")
        lo = self.quad_lo if self.quad_lo is not None else DEFAULT_QUAD_LO
        hi = self.quad_hi if self.quad_hi is not None else DEFAULT_QUAD_HI
        if not lo < hi:
            raise ValueError("--quad-lo must be smaller than --quad-hi")
        if self.threads < 1:
            raise ValueError("--threads must be >= 1")
        if self.draws < 1:
            raise ValueError("--draws must be >= 1")
        if self.half_width is not None and not self.half_width > 0:
            raise ValueError("--half-width must be positive")
        return self

    @property
    def kinds(self) -> List[Kind]:
        return ["prmse", "ctt"] if self.kind == "both" else [self.kind]


class ErrorCard(BaseModel):
    """Machine-readable failure written to stderr."""

    error: bool = True
    reason: str
    violation_type: str = "unspecified"
    exit_code: int
    context: Dict[str, Any] = Field(default_factory=dict)


class CommandOutcome(BaseModel):
    """One-line summary printed to stdout after a successful command."""

    command: str
    output_type: str
    outputs: List[str] = Field(default_factory=list)
    summary: str = ""
    exit_code: int = 0

"""Monte Carlo coverage study for the reliability standard errors.

For every (n, m) condition: draw item parameters once, compute the population
coefficients at those parameters, then for each replication generate a
dataset, fit by EM and compute both coefficients with SEs and intervals.

Random streams are Philox generators keyed by (seed, condition, purpose[, rep])
so a replication's data does not depend on which worker ran it or in what
order. Results are reduced by replication index.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy.stats import norm

from app.core.audit import utc_timestamp
from app.core.errors import DesignError, EstimationError, NumericalError
from app.core.schemas import ConditionSummary, ItemParams, ItemSpec, Kind, ReliabilityReport, SimDesign, SimSummary
from app.engines.estimation import fit_em
from app.engines.model_core import sample_responses
from app.engines.quadrature import QuadratureGrid, grid_from_spec
from app.engines.reliability import pattern_count, population_oracles, reliability_with_se

log = logging.getLogger(__name__)

_PARAM_STREAM = 0
_ORACLE_STREAM = 1
_DATA_STREAM = 2
_MAX_REDRAWS = 100

Status = Literal["ok", "nonconverged", "failed"]


def condition_stream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=tuple(keys))))


# ─── Parameters and data ─────────────────────────────────────────────────────


def draw_item_params(design: SimDesign, m: int, rng: np.random.Generator) -> ItemParams:
    """a ~ U[lo, hi]; 2PL b ~ N(mean, sd); GRM b_1 ~ N(mean, sd) and
    b_k = b_{k-1} + d with d ~ N(step_mean, step_sd). Intercepts c = -a * b."""
    lo, hi = design.slope_range
    K = int(design.n_categories)
    items = []
    for j in range(m):
        a = float(rng.uniform(lo, hi))
        b1 = float(rng.normal(design.difficulty_mean, design.difficulty_sd))
        for _ in range(_MAX_REDRAWS):
            steps = rng.normal(design.step_mean, design.step_sd, size=K - 2)
            if np.all(steps > 0):
                break
        else:
            raise DesignError(
                f"Could not draw increasing difficulties for item {j + 1} in "
                f"{_MAX_REDRAWS} attempts; check step_mean and step_sd.",
                item=j + 1,
            )
        b = b1 + np.concatenate(([0.0], np.cumsum(steps)))
        items.append(ItemSpec(a=a, c=tuple(float(x) for x in -a * b), name=f"item{j + 1}"))
    return ItemParams(items=tuple(items))


def generate_responses(params: ItemParams, n: int, rng: np.random.Generator) -> NDArray[np.int64]:
    """theta ~ N(0, 1), then one categorical draw per item."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return sample_responses(params, rng.standard_normal(n), rng)


# ─── Replications ────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class ReplicationTask:
    design: SimDesign
    params: ItemParams
    n: int
    condition: int
    rep: int


@dataclass(frozen=True)
class ReplicationOutcome:
    rep: int
    status: Status
    reason: Optional[str] = None
    reports: Dict[str, ReliabilityReport] = field(default_factory=dict)
    kind_failures: Dict[str, str] = field(default_factory=dict)


def run_replication(task: ReplicationTask) -> ReplicationOutcome:
    design = task.design
    rng = condition_stream(design.seed, task.condition, _DATA_STREAM, task.rep)
    y = generate_responses(task.params, task.n, rng)
    grid = grid_from_spec(design.grid)
    try:
        fit = fit_em(y, grid=grid, tol=design.em_tol, max_iter=design.max_iter,
                     n_categories=task.params.n_categories, info_method=design.info_method)
    except EstimationError as exc:
        log.warning("Replication %d skipped: %s", task.rep, exc.reason)
        return ReplicationOutcome(rep=task.rep, status="failed", reason=exc.violation_type)
    if not fit.converged:
        return ReplicationOutcome(rep=task.rep, status="nonconverged", reason="not_converged")

    reports: Dict[str, ReliabilityReport] = {}
    failures: Dict[str, str] = {}
    for kind in design.kinds:
        try:
            reports[kind] = reliability_with_se(y, fit, grid, kind, design.alpha)
        except NumericalError as exc:
            log.warning("Replication %d: %s reliability failed: %s", task.rep, kind, exc.reason)
            failures[kind] = exc.violation_type
    return ReplicationOutcome(rep=task.rep, status="ok", reports=reports, kind_failures=failures)


def _execute(tasks: Sequence[ReplicationTask], threads: int) -> List[ReplicationOutcome]:
    if threads <= 1 or len(tasks) <= 1:
        outcomes = [run_replication(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run_replication, tasks, chunksize=max(1, len(tasks) // (4 * threads))))
    return sorted(outcomes, key=lambda o: o.rep)


# ─── Summaries ───────────────────────────────────────────────────────────────


def coverage_bounds(replications: int, nominal: float = 0.95) -> Tuple[float, float]:
    """Normal-approximation Monte Carlo band for an empirical coverage rate."""
    half = float(norm.ppf(0.975)) * math.sqrt(nominal * (1.0 - nominal) / replications)
    return nominal - half, nominal + half


def summarize_condition(kind: Kind, n: int, m: int, true: Optional[float], oracle_mode: str,
                        outcomes: Sequence[ReplicationOutcome]) -> ConditionSummary:
    used = [o.reports[kind] for o in outcomes if o.status == "ok" and kind in o.reports]
    n_nonconv = sum(o.status == "nonconverged" for o in outcomes)
    n_failed = sum(o.status == "failed" or kind in o.kind_failures for o in outcomes)
    summary = ConditionSummary(kind=kind, n=n, m=m, true=true, oracle_mode=oracle_mode,
                               n_used=len(used), n_nonconv=n_nonconv, n_failed=n_failed)
    if not used:
        return summary

    points = np.array([r.point for r in used])
    summary.est = float(points.mean())
    summary.emp_sd = float(points.std(ddof=1)) if points.size > 1 else None
    summary.mean_se = float(np.mean([r.se for r in used]))
    summary.lb = float(np.mean([r.ci_lo for r in used]))
    summary.ub = float(np.mean([r.ci_hi for r in used]))
    summary.n_over1 = int(np.sum(points > 1.0)) if kind == "ctt" else 0
    if true is not None:
        summary.coverage = float(np.mean([r.ci_lo <= true <= r.ci_hi for r in used]))
        summary.rel_bias = (summary.est - true) / true if true != 0 else None
    return summary


def condition_truth(design: SimDesign, params: ItemParams, grid: QuadratureGrid,
                    rng: np.random.Generator) -> Tuple[Dict[str, Optional[float]], str]:
    if pattern_count(params) <= design.enum_cap:
        mode = "enumerate"
    else:
        mode = "monte_carlo"
        log.info("Pattern count exceeds %d; population values by %d Monte Carlo draws",
                 design.enum_cap, design.oracle_mc_draws)
    values = population_oracles(params, grid, design.kinds, mode=mode,
                                mc_draws=design.oracle_mc_draws, rng=rng, cap=design.enum_cap)
    return values, mode


def run_study(design: SimDesign, threads: int = 1) -> SimSummary:
    grid = grid_from_spec(design.grid)
    conditions: List[ConditionSummary] = []
    reasons: Counter = Counter()
    for index, (n, m) in enumerate(design.conditions):
        params = draw_item_params(design, m, condition_stream(design.seed, index, _PARAM_STREAM))
        truths, mode = condition_truth(design, params, grid,
                                       condition_stream(design.seed, index, _ORACLE_STREAM))
        tasks = [ReplicationTask(design=design, params=params, n=n, condition=index, rep=r)
                 for r in range(design.replications)]
        outcomes = _execute(tasks, threads)
        for outcome in outcomes:
            if outcome.reason:
                reasons[outcome.reason] += 1
            for failure in outcome.kind_failures.values():
                reasons[failure] += 1
        for kind in design.kinds:
            summary = summarize_condition(kind, n, m, truths[kind], mode, outcomes)
            conditions.append(summary)
            log.info("Condition n=%d m=%d %s: est=%s coverage=%s over1=%d nonconv=%d",
                     n, m, kind, summary.est, summary.coverage, summary.n_over1, summary.n_nonconv)

    return SimSummary(
        created_at=utc_timestamp(),
        design=design,
        coverage_bounds=coverage_bounds(design.replications, 1.0 - design.alpha),
        conditions=conditions,
        failure_reasons=dict(sorted(reasons.items())),
    )

"""Reliability of EAP scores: moment vectors, transformations, standard errors.

Both coefficients are smooth functions phi(eta) of a population mean
eta = E[H(Y; nu)] of a per-respondent vector H:

    PRMSE  H = (eap, eap^2, postvar)
           phi = (x2 - x1^2) / (x2 - x1^2 + x3)
    CTT    H = (eap, eap^2, eap * f(y | theta_q) / f(y) for every node q)
           phi = (sum_q w_q x_{2+q}^2 - x1^2) / (x2 - x1^2)

The sample estimate phi(eta_hat(nu_hat)) gets a Delta-method standard error
from the influence vector A_i = H_i - eta_hat + J^T I^{-1} g_i, which adds the
item-parameter estimation noise (through the marginal scores g_i) to the
sampling noise of the moments.

Population values ("oracle") come from enumerating every response pattern
weighted by its marginal probability on the same grid, or from Monte Carlo
draws when the pattern count exceeds the enumeration cap.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterator, List, Literal, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.stats import norm

from app.core.errors import (
    ConfigurationError,
    DegenerateMomentsError,
    EnumerationCapError,
    InputValidationError,
)
from app.core.schemas import ItemParams, Kind, ReliabilityReport
from app.core.settings import DEFAULT_ALPHA, ENUM_CAP, MC_DRAWS
from app.engines.estimation import FitResult, invert_information, marginal_scores
from app.engines.model_core import GridKernel, sample_responses, validate_pattern, validate_responses
from app.engines.quadrature import QuadratureGrid
from app.engines.scoring import PosteriorBatch, eap_gradients, posterior_batch, postvar_gradients

log = logging.getLogger(__name__)

JacobianMode = Literal["explicit", "total"]
OracleMode = Literal["enumerate", "monte_carlo"]

OVER_ONE_FLAG = "exceeds_one"
NOT_CONVERGED_FLAG = "fit_not_converged"

_DEGENERATE_TOL = 1e-12
_ENUM_CHUNK = 50_000
_MC_CHUNK = 100_000


@dataclass(frozen=True)
class HVector:
    kind: Kind
    values: NDArray[np.float64]
    gradient: NDArray[np.float64]  # (len(values), n_params)


@dataclass(frozen=True)
class MomentEstimate:
    kind: Kind
    eta_hat: NDArray[np.float64]
    jacobian: NDArray[np.float64]  # (n_params, len(eta_hat))
    sigma_hat: NDArray[np.float64]
    n: int


def moment_length(kind: Kind, grid: QuadratureGrid) -> int:
    return 3 if kind == "prmse" else 2 + grid.q_count


# ─── Per-pattern H vectors ───────────────────────────────────────────────────


def h_prmse(pattern: ArrayLike, params: ItemParams, grid: QuadratureGrid) -> HVector:
    y = validate_pattern(pattern, params)[None, :]
    kernel = GridKernel(params, grid.nodes)
    batch = posterior_batch(y, params, grid, kernel)
    return HVector(
        kind="prmse",
        values=_h_values("prmse", batch)[0],
        gradient=_jacobian_rows("prmse", y, kernel, batch, np.ones(1)),
    )


def h_ctt(pattern: ArrayLike, params: ItemParams, grid: QuadratureGrid) -> HVector:
    y = validate_pattern(pattern, params)[None, :]
    kernel = GridKernel(params, grid.nodes)
    batch = posterior_batch(y, params, grid, kernel)
    return HVector(
        kind="ctt",
        values=_h_values("ctt", batch)[0],
        gradient=_jacobian_rows("ctt", y, kernel, batch, np.ones(1)),
    )


def _h_values(kind: Kind, batch: PosteriorBatch) -> NDArray[np.float64]:
    eap = batch.eap
    if kind == "prmse":
        return np.column_stack((eap, eap ** 2, batch.post_var))
    return np.column_stack((eap, eap ** 2, eap[:, None] * batch.ratio))


def _jacobian_rows(kind: Kind, y: NDArray[np.int64], kernel: GridKernel, batch: PosteriorBatch,
                   row_weights: NDArray[np.float64]) -> NDArray[np.float64]:
    """sum_i row_weights[i] * dH(y_i)/dnu, shape (len(H), n_params)."""
    G1 = eap_gradients(y, batch, kernel)
    first = row_weights @ G1
    second = (2.0 * row_weights * batch.eap) @ G1
    if kind == "prmse":
        third = row_weights @ postvar_gradients(y, batch, kernel)
        return np.vstack((first, second, third))

    # d(eap * ratio_q) = ratio_q d eap + eap * ratio_q * (s_q - g), with s_q
    # the conditional score at node q and g the marginal score.
    scaled = (row_weights * batch.eap)[:, None] * batch.ratio
    G = marginal_scores(y, kernel, batch)
    nodes = ((row_weights[:, None] * batch.ratio).T @ G1
             + kernel.node_score_totals(y, scaled)
             - scaled.T @ G)
    return np.vstack((first, second, nodes))


# ─── Moment estimation ───────────────────────────────────────────────────────


def estimate_moments(
    data: ArrayLike,
    params: ItemParams,
    grid: QuadratureGrid,
    kind: Kind,
    info: Optional[ArrayLike] = None,
    jacobian: JacobianMode = "explicit",
    force_zero_jacobian: bool = False,
) -> MomentEstimate:
    """eta_hat, its parameter Jacobian and the per-observation covariance.

    `info` is the per-observation information at `params`; the score
    cross-product on `data` is used when it is not supplied.
    jacobian="explicit" uses J = mean of dH/dnu. "total" adds mean of H g^T,
    the derivative of the model-implied eta(nu) = sum_y H(y; nu) f(y; nu).
    force_zero_jacobian drops the parameter-uncertainty term entirely.
    """
    y = validate_responses(data, params)
    n = y.shape[0]
    if n < 2:
        raise InputValidationError(f"At least two respondents are required, got {n}.")

    kernel = GridKernel(params, grid.nodes)
    batch = posterior_batch(y, params, grid, kernel)
    H = _h_values(kind, batch)
    eta_hat = H.mean(axis=0)

    if force_zero_jacobian:
        J = np.zeros((params.n_params, H.shape[1]))
        A = H - eta_hat
    else:
        rows = _jacobian_rows(kind, y, kernel, batch, np.full(n, 1.0 / n))
        G = marginal_scores(y, kernel, batch)
        if jacobian == "total":
            rows = rows + H.T @ G / n
        elif jacobian != "explicit":
            raise ValueError(f"unknown jacobian mode '{jacobian}'")
        info = G.T @ G / n if info is None else np.asarray(info, dtype=float)
        J = rows.T
        A = H - eta_hat + G @ (invert_information(info) @ J)

    A = A - A.mean(axis=0)
    sigma = A.T @ A / n
    return MomentEstimate(kind=kind, eta_hat=eta_hat, jacobian=J,
                          sigma_hat=0.5 * (sigma + sigma.T), n=n)


# ─── Transformations ─────────────────────────────────────────────────────────


def phi_prmse(eta: ArrayLike) -> Tuple[float, NDArray[np.float64]]:
    x1, x2, x3 = (float(v) for v in np.asarray(eta, dtype=float))
    num = x2 - x1 ** 2
    den = num + x3
    if not den > _DEGENERATE_TOL:
        raise DegenerateMomentsError(
            f"PRMSE denominator x2 - x1^2 + x3 = {den:.3e} is not positive.",
            denominator=den,
        )
    grad = np.array([-2.0 * x1 * x3, x3, -num]) / den ** 2
    return num / den, grad


def phi_ctt(eta: ArrayLike, weights: ArrayLike) -> Tuple[float, NDArray[np.float64]]:
    x = np.asarray(eta, dtype=float)
    w = np.asarray(weights, dtype=float)
    if x.size != w.size + 2:
        raise ValueError(f"CTT moment vector has length {x.size}, expected {w.size + 2}")
    x1, x2, tail = x[0], x[1], x[2:]
    num = float(w @ tail ** 2 - x1 ** 2)
    den = float(x2 - x1 ** 2)
    if not den > _DEGENERATE_TOL:
        raise DegenerateMomentsError(
            f"Observed-score variance {den:.3e} is not positive; CTT reliability "
            "is undefined for this test.",
            denominator=den,
        )
    grad = np.empty_like(x)
    grad[0] = 2.0 * x1 * (num - den) / den ** 2
    grad[1] = -num / den ** 2
    grad[2:] = 2.0 * w * tail / den
    return num / den, grad


def apply_phi(kind: Kind, eta: ArrayLike, grid: QuadratureGrid) -> Tuple[float, NDArray[np.float64]]:
    return phi_prmse(eta) if kind == "prmse" else phi_ctt(eta, grid.weights)


# ─── Standard errors and intervals ───────────────────────────────────────────


def _report(kind: Kind, point: float, se: float, alpha: float, n: int, m: int,
            grid: QuadratureGrid, jacobian: str, flags: List[str]) -> ReliabilityReport:
    z = float(norm.ppf(1.0 - alpha / 2.0))
    if kind == "ctt" and point > 1.0:
        log.warning("CTT reliability estimate %.4f exceeds one; reported unclipped", point)
        flags = flags + [OVER_ONE_FLAG]
    return ReliabilityReport(kind=kind, point=point, se=se, ci_lo=point - z * se,
                             ci_hi=point + z * se, alpha=alpha, n=n, m=m,
                             n_quad=grid.q_count, jacobian=jacobian, flags=flags)


def reliability_with_se(
    data: ArrayLike,
    fit: FitResult,
    grid: QuadratureGrid,
    kind: Kind,
    alpha: float = DEFAULT_ALPHA,
    jacobian: JacobianMode = "explicit",
    force_zero_jacobian: bool = False,
) -> ReliabilityReport:
    """Point estimate, SE = sqrt(grad^T Sigma grad / n) and an untruncated
    Wald interval."""
    if not 0.0 < alpha < 1.0:
        raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha}")
    flags: List[str] = []
    if not fit.converged:
        log.warning("Reliability computed from a fit that did not converge")
        flags.append(NOT_CONVERGED_FLAG)

    est = estimate_moments(data, fit.params, grid, kind, info=fit.info,
                           jacobian=jacobian, force_zero_jacobian=force_zero_jacobian)
    point, grad = apply_phi(kind, est.eta_hat, grid)
    se = math.sqrt(max(float(grad @ est.sigma_hat @ grad), 0.0) / est.n)
    label = "none" if force_zero_jacobian else jacobian
    return _report(kind, point, se, alpha, est.n, fit.params.n_items, grid, label, flags)


def required_sample_size(report: ReliabilityReport, half_width: float,
                         alpha: Optional[float] = None) -> int:
    """Smallest n whose Wald half-width is at most `half_width`, scaling the
    reported SE as 1/sqrt(n)."""
    if not half_width > 0:
        raise ConfigurationError(f"half_width must be positive, got {half_width}")
    z = float(norm.ppf(1.0 - (alpha if alpha is not None else report.alpha) / 2.0))
    return max(2, math.ceil(report.n * (z * report.se / half_width) ** 2))


# ─── Population values ───────────────────────────────────────────────────────


def pattern_count(params: ItemParams) -> int:
    return math.prod(int(k) for k in params.n_categories)


def enumerate_patterns(params: ItemParams, cap: int = ENUM_CAP,
                       chunk: int = _ENUM_CHUNK) -> Iterator[NDArray[np.int64]]:
    """Every response pattern in mixed-radix order (last item fastest), in chunks."""
    total = pattern_count(params)
    if total > cap:
        raise EnumerationCapError(
            f"{total} response patterns exceed the enumeration cap of {cap}; "
            "use monte_carlo mode instead.",
            patterns=total,
            cap=cap,
        )
    shape = tuple(int(k) for k in params.n_categories)
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.int64)
        yield np.column_stack(np.unravel_index(idx, shape)).astype(np.int64)


def population_moments(
    params: ItemParams,
    grid: QuadratureGrid,
    kind: Kind,
    cap: int = ENUM_CAP,
    with_jacobian: bool = False,
) -> Tuple[NDArray[np.float64], Optional[NDArray[np.float64]]]:
    """eta(nu) = sum_y H(y; nu) f(y; nu) and, optionally, its total derivative
    as (len(eta), n_params) rows."""
    kernel = GridKernel(params, grid.nodes)
    eta = np.zeros(moment_length(kind, grid))
    rows = np.zeros((eta.size, params.n_params)) if with_jacobian else None
    for chunk in enumerate_patterns(params, cap):
        batch = posterior_batch(chunk, params, grid, kernel)
        f = np.exp(batch.log_marginal)
        H = _h_values(kind, batch)
        eta += f @ H
        if rows is not None:
            G = marginal_scores(chunk, kernel, batch)
            rows += _jacobian_rows(kind, chunk, kernel, batch, f) + (f[:, None] * H).T @ G
    return eta, rows


def _sampled_moments(params: ItemParams, grid: QuadratureGrid, kinds: Sequence[Kind],
                     draws: int, rng: np.random.Generator) -> Dict[str, NDArray[np.float64]]:
    kernel = GridKernel(params, grid.nodes)
    sums = {kind: np.zeros(moment_length(kind, grid)) for kind in kinds}
    done = 0
    while done < draws:
        size = min(_MC_CHUNK, draws - done)
        y = sample_responses(params, rng.standard_normal(size), rng)
        batch = posterior_batch(y, params, grid, kernel)
        for kind in kinds:
            sums[kind] += _h_values(kind, batch).sum(axis=0)
        done += size
    return {kind: total / draws for kind, total in sums.items()}


def population_oracles(
    params: ItemParams,
    grid: QuadratureGrid,
    kinds: Sequence[Kind] = ("prmse", "ctt"),
    mode: OracleMode = "enumerate",
    mc_draws: int = MC_DRAWS,
    rng: Optional[np.random.Generator] = None,
    cap: int = ENUM_CAP,
) -> Dict[str, Optional[float]]:
    """Population coefficients by kind; None where the coefficient is
    undefined (e.g. CTT for a test with no information)."""
    if mode == "enumerate":
        etas = {kind: population_moments(params, grid, kind, cap)[0] for kind in kinds}
    elif mode == "monte_carlo":
        if mc_draws < 1:
            raise ConfigurationError(f"mc_draws must be >= 1, got {mc_draws}")
        rng = rng or np.random.Generator(np.random.Philox(0))
        etas = _sampled_moments(params, grid, kinds, mc_draws, rng)
    else:
        raise ConfigurationError(f"unknown oracle mode '{mode}'")

    values: Dict[str, Optional[float]] = {}
    for kind in kinds:
        try:
            values[kind] = apply_phi(kind, etas[kind], grid)[0]
        except DegenerateMomentsError as exc:
            log.warning("Population %s reliability undefined: %s", kind, exc.reason)
            values[kind] = None
    log.info("Population reliability (%s): %s", mode, values)
    return values


def population_oracle(
    params: ItemParams,
    grid: QuadratureGrid,
    kind: Kind,
    mode: OracleMode = "enumerate",
    mc_draws: int = MC_DRAWS,
    rng: Optional[np.random.Generator] = None,
    cap: int = ENUM_CAP,
) -> float:
    """phi(eta(nu)) at the true parameters. Degenerate moments raise."""
    if mode == "enumerate":
        eta = population_moments(params, grid, kind, cap)[0]
    elif mode == "monte_carlo":
        eta = _sampled_moments(params, grid, [kind], mc_draws,
                               rng or np.random.Generator(np.random.Philox(0)))[kind]
    else:
        raise ConfigurationError(f"unknown oracle mode '{mode}'")
    return apply_phi(kind, eta, grid)[0]


def direct_ctt_reliability(
    params: ItemParams,
    grid: QuadratureGrid,
    fine_grid: Optional[QuadratureGrid] = None,
    cap: int = ENUM_CAP,
) -> float:
    """Var(tau) / Var(s) from the full pattern table, s the EAP on `grid` and
    tau(theta) = E[s | theta] on `fine_grid` (defaults to `grid`)."""
    outer = fine_grid or grid
    kernel = GridKernel(params, grid.nodes)
    outer_kernel = GridKernel(params, outer.nodes)
    w = outer.weights
    tau = np.zeros(outer.q_count)
    second = 0.0
    for chunk in enumerate_patterns(params, cap):
        eap = posterior_batch(chunk, params, grid, kernel).eap
        cond = np.exp(outer_kernel.log_likelihood(chunk))
        tau += eap @ cond
        # E[s^2] = sum_q w_q E[s^2 | theta_q]
        second += float((eap ** 2) @ cond @ w)

    mean = float(w @ tau)
    var_tau = float(w @ tau ** 2) - mean ** 2
    var_s = second - mean ** 2
    if not var_s > _DEGENERATE_TOL:
        raise DegenerateMomentsError(
            f"Observed-score variance {var_s:.3e} is not positive.", denominator=var_s
        )
    return var_tau / var_s


def model_implied_reliability(
    fit: FitResult,
    grid: QuadratureGrid,
    kind: Kind,
    alpha: float = DEFAULT_ALPHA,
    cap: int = ENUM_CAP,
) -> ReliabilityReport:
    """Plug-in phi(eta(nu_hat)) by enumeration. Its SE reflects item-parameter
    uncertainty only: sqrt(d^T I^{-1} d / n) with d = (d eta / d nu)^T grad phi."""
    eta, rows = population_moments(fit.params, grid, kind, cap, with_jacobian=True)
    point, grad = apply_phi(kind, eta, grid)
    d = rows.T @ grad
    se = math.sqrt(max(float(d @ invert_information(fit.info) @ d), 0.0) / fit.n)
    flags = [] if fit.converged else [NOT_CONVERGED_FLAG]
    return _report(kind, point, se, alpha, fit.n, fit.params.n_items, grid, "model_implied", flags)

"""Marginal maximum likelihood for the GRM by EM (Bock-Aitkin layout).

E-step: posterior weights of every respondent on the quadrature grid, reduced
to expected category counts per item and node.
M-step: a few Newton-Raphson steps per item on the expected complete-data
log-likelihood, with step-halving. Intercepts are handled as
(c_1, log(c_1 - c_2), log(c_2 - c_3), ...) during the update, so the ordering
c_1 > c_2 > ... holds at every iterate.

Non-convergence is reported on the result, not raised.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import logit

from app.core.audit import utc_timestamp
from app.core.errors import EstimationError, InputValidationError, InversionError
from app.core.schemas import FitRecord, ItemParams, ItemSpec
from app.core.settings import EM_MAX_ITER, EM_TOLERANCE, NEWTON_STEPS
from app.engines.model_core import GridKernel, ParamVector, item_derivatives, pack, validate_pattern
from app.engines.quadrature import QuadratureGrid, build_grid
from app.engines.scoring import PosteriorBatch, posterior_batch

log = logging.getLogger(__name__)

InfoMethod = Literal["crossprod", "louis"]

_MAX_STEP = 1.0
_MAX_HALVINGS = 10
_LOG_GAP_BOUNDS = (-25.0, 25.0)
_CHUNK_CELLS = 4_000_000


@dataclass(frozen=True)
class FitResult:
    params: ItemParams
    nu_hat: ParamVector
    info: NDArray[np.float64]
    log_likelihood: float
    n: int
    converged: bool
    iterations: int
    history: Tuple[float, ...]
    info_method: str
    max_change: float

    @property
    def model(self) -> str:
        return "2pl" if np.all(self.params.n_categories == 2) else "grm"

    def to_record(self, grid: QuadratureGrid) -> FitRecord:
        return FitRecord(
            created_at=utc_timestamp(),
            model=self.model,
            params=self.params,
            grid=grid.spec,
            n=self.n,
            log_likelihood=self.log_likelihood,
            converged=self.converged,
            iterations=self.iterations,
            max_change=self.max_change if np.isfinite(self.max_change) else None,
            history=list(self.history),
            info_method=self.info_method,
            info=self.info.tolist(),
        )

    @classmethod
    def from_record(cls, record: FitRecord) -> "FitResult":
        info = np.asarray(record.info, dtype=float)
        P = record.params.n_params
        if info.shape != (P, P):
            raise InputValidationError(
                f"Fit file information matrix is {info.shape}, expected ({P}, {P})."
            )
        return cls(
            params=record.params,
            nu_hat=pack(record.params),
            info=info,
            log_likelihood=record.log_likelihood,
            n=record.n,
            converged=record.converged,
            iterations=record.iterations,
            history=tuple(record.history),
            info_method=record.info_method,
            max_change=record.max_change if record.max_change is not None else float("nan"),
        )


# ─── Marginal scores and information ─────────────────────────────────────────


def marginal_scores(data: NDArray[np.int64], kernel: GridKernel, batch: PosteriorBatch) -> NDArray[np.float64]:
    """(n, P) gradients of log f(y_i); Fisher's identity: posterior mean of the
    conditional score."""
    return kernel.weighted_scores(data, batch.weights)


def marginal_score(pattern: ArrayLike, params: ItemParams, grid: QuadratureGrid) -> ParamVector:
    y = validate_pattern(pattern, params)[None, :]
    kernel = GridKernel(params, grid.nodes)
    return marginal_scores(y, kernel, posterior_batch(y, params, grid, kernel))[0]


def observed_information(
    data: ArrayLike,
    params: ItemParams,
    grid: QuadratureGrid,
    method: InfoMethod = "crossprod",
) -> NDArray[np.float64]:
    """Per-observation information matrix at `params`.

    crossprod: (1/n) sum_i g_i g_i^T with g_i the marginal score.
    louis:     (1/n) sum_i -d^2 log f(y_i) / d nu^2 via Louis' identity.
    """
    y = np.asarray(data, dtype=np.int64)
    kernel = GridKernel(params, grid.nodes)
    batch = posterior_batch(y, params, grid, kernel)
    return _information(y, kernel, batch, method)


def _information(y: NDArray[np.int64], kernel: GridKernel, batch: PosteriorBatch,
                 method: InfoMethod) -> NDArray[np.float64]:
    n = y.shape[0]
    G = marginal_scores(y, kernel, batch)
    if method == "crossprod":
        info = G.T @ G / n
    elif method == "louis":
        info = _louis_information(y, kernel, batch, G)
    else:
        raise ValueError(f"unknown information method '{method}'")
    return 0.5 * (info + info.T)


def _louis_information(y: NDArray[np.int64], kernel: GridKernel, batch: PosteriorBatch,
                       G: NDArray[np.float64]) -> NDArray[np.float64]:
    # -d2 log f(y) = g g^T - E_post[sum_j bend_j] - offdiag(E_post[s s^T]):
    # within an item, bend - s_j s_j^T is the conditional Hessian and the
    # s_j s_j^T part cancels against the diagonal block of E[s s^T].
    n, P = G.shape
    total = G.T @ G
    block = np.zeros((P, P), dtype=bool)
    for j, tab in enumerate(kernel.tables):
        off, K = kernel.offsets[j], kernel.n_categories[j]
        counts = kernel.category_weights(y, batch.weights, j)
        total[off:off + K, off:off + K] -= np.einsum("kq,qkab->ab", counts, tab.bend)
        block[off:off + K, off:off + K] = True

    chunk = max(1, _CHUNK_CELLS // max(1, kernel.nodes.size * P))
    second = np.zeros((P, P))
    for start in range(0, n, chunk):
        S = kernel.score_tensor(y[start:start + chunk])
        second += np.einsum("iq,iqa,iqb->ab", batch.weights[start:start + chunk], S, S)
    total -= np.where(block, 0.0, second)
    return total / n


def invert_information(info: ArrayLike) -> NDArray[np.float64]:
    """Cholesky inverse; a non-positive-definite matrix raises InversionError
    carrying the smallest eigenvalue."""
    info = np.asarray(info, dtype=float)
    info = 0.5 * (info + info.T)
    if not np.all(np.isfinite(info)):
        raise InversionError("Information matrix contains non-finite entries.",
                             smallest_eigenvalue=float("nan"))
    try:
        factor = cho_factor(info, lower=True)
        inverse = cho_solve(factor, np.eye(info.shape[0]))
    except LinAlgError:
        smallest = float(np.linalg.eigvalsh(info)[0])
        raise InversionError(
            f"Information matrix is not positive definite (smallest eigenvalue "
            f"{smallest:.3e}); the model is not identified at these estimates.",
            smallest_eigenvalue=smallest,
        )
    return 0.5 * (inverse + inverse.T)


# ─── Starting values and checks ──────────────────────────────────────────────


def check_estimable(data: NDArray[np.int64], n_categories: Sequence[int],
                    names: Optional[Sequence[str]] = None) -> None:
    n, m = data.shape
    if n < 2:
        raise EstimationError(f"At least two respondents are required, got {n}.")
    for j in range(m):
        name = names[j] if names is not None else f"item{j + 1}"
        counts = np.bincount(data[:, j], minlength=int(n_categories[j]))
        if np.count_nonzero(counts) < 2:
            raise EstimationError(
                f"Item '{name}' is degenerate: every response is {int(data[0, j])}.",
                item=name,
            )
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            raise EstimationError(
                f"Item '{name}' has no responses in category {int(empty[0])}; "
                "its ML estimate does not exist.",
                item=name,
                category=int(empty[0]),
            )


def initial_params(data: NDArray[np.int64], n_categories: Sequence[int],
                   names: Optional[Sequence[str]] = None) -> ItemParams:
    """Slopes 1; intercepts from cumulative proportions on the logit scale,
    widened for the N(0, 1) prior and pushed apart to stay strictly ordered."""
    scale = np.sqrt(1.0 + np.pi / 8.0)
    items = []
    for j, K in enumerate(n_categories):
        p = np.array([np.mean(data[:, j] >= k) for k in range(1, int(K))])
        c = logit(np.clip(p, 0.01, 0.99)) * scale
        for k in range(1, c.size):
            c[k] = min(c[k], c[k - 1] - 0.05)
        items.append(ItemSpec(a=1.0, c=tuple(float(x) for x in c),
                              name=names[j] if names is not None else None))
    return ItemParams(items=tuple(items))


# ─── M-step ──────────────────────────────────────────────────────────────────


def _to_free(item: ItemSpec) -> NDArray[np.float64]:
    c = np.asarray(item.c)
    return np.concatenate(([item.a, c[0]], np.log(c[:-1] - c[1:])))


def _from_free(psi: NDArray[np.float64], name: Optional[str]) -> ItemSpec:
    c = [float(psi[1])]
    for d in np.clip(psi[2:], *_LOG_GAP_BOUNDS):
        c.append(c[-1] - float(np.exp(d)))
    return ItemSpec(a=float(psi[0]), c=tuple(c), name=name)


def _expected_loglik(item: ItemSpec, counts: NDArray[np.float64], nodes: NDArray[np.float64],
                     with_derivatives: bool = True):
    tab = item_derivatives(item, nodes)
    value = float(np.sum(counts.T * tab.log_prob))
    if not with_derivatives:
        return value, None, None
    grad = np.einsum("kq,qkp->p", counts, tab.score)
    hess = (np.einsum("kq,qkab->ab", counts, tab.bend)
            - np.einsum("kq,qka,qkb->ab", counts, tab.score, tab.score))
    return value, grad, hess


def _chain_to_free(psi: NDArray[np.float64], grad: NDArray[np.float64],
                   hess: NDArray[np.float64]) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
    K = psi.size
    gaps = np.exp(np.clip(psi[2:], *_LOG_GAP_BOUNDS))
    T = np.zeros((K, K))
    T[0, 0] = 1.0
    for k in range(1, K):
        T[k, 1] = 1.0
        for l in range(2, k + 1):
            T[k, l] = -gaps[l - 2]
    g = T.T @ grad
    H = T.T @ hess @ T
    for l in range(2, K):
        H[l, l] -= gaps[l - 2] * grad[l:].sum()
    return g, H


def _ascent_direction(neg_hess: NDArray[np.float64], grad: NDArray[np.float64]) -> NDArray[np.float64]:
    try:
        return cho_solve(cho_factor(neg_hess, lower=True), grad)
    except LinAlgError:
        ridge = max(0.0, -float(np.linalg.eigvalsh(neg_hess)[0])) + 1e-6 * max(1.0, float(np.trace(np.abs(neg_hess))))
        return np.linalg.solve(neg_hess + ridge * np.eye(grad.size), grad)


def _update_item(item: ItemSpec, counts: NDArray[np.float64], nodes: NDArray[np.float64],
                 fix_slope: bool) -> ItemSpec:
    psi = _to_free(item)
    free = np.ones(psi.size, dtype=bool)
    free[0] = not fix_slope
    for _ in range(NEWTON_STEPS):
        value, grad, hess = _expected_loglik(_from_free(psi, item.name), counts, nodes)
        g, H = _chain_to_free(psi, grad, hess)
        step = _ascent_direction(-H[np.ix_(free, free)], g[free])
        biggest = float(np.max(np.abs(step)))
        if biggest > _MAX_STEP:
            step *= _MAX_STEP / biggest
        for _ in range(_MAX_HALVINGS):
            candidate = psi.copy()
            candidate[free] += step
            new_value, _, _ = _expected_loglik(_from_free(candidate, item.name), counts, nodes,
                                               with_derivatives=False)
            if new_value >= value:
                psi = candidate
                break
            step *= 0.5
        else:
            break
        if float(np.max(np.abs(step))) < 1e-10:
            break
    return _from_free(psi, item.name)


# ─── EM driver ───────────────────────────────────────────────────────────────


def fit_em(
    data: ArrayLike,
    init: Optional[ItemParams] = None,
    grid: Optional[QuadratureGrid] = None,
    tol: float = EM_TOLERANCE,
    max_iter: int = EM_MAX_ITER,
    n_categories: Optional[Sequence[int]] = None,
    names: Optional[Sequence[str]] = None,
    fix_slopes: bool | Sequence[bool] = False,
    info_method: InfoMethod = "crossprod",
) -> FitResult:
    """Fit item parameters by EM.

    Category counts come from `init`, else `n_categories`, else the largest
    observed category per item. Convergence: max |change in nu| < tol.
    """
    y = np.asarray(data, dtype=np.int64)
    if y.ndim != 2:
        raise EstimationError(f"Response data must be a matrix, got shape {y.shape}.")
    grid = grid or build_grid()
    if init is not None:
        counts_per_item = init.n_categories
    elif n_categories is not None:
        counts_per_item = np.asarray(n_categories, dtype=np.int64)
    else:
        counts_per_item = np.maximum(y.max(axis=0) + 1, 2)
    if np.any(y < 0) or np.any(y >= np.asarray(counts_per_item)[None, :]):
        raise EstimationError("Responses fall outside the items' category ranges.")
    if names is None and init is not None:
        names = init.item_names
    check_estimable(y, counts_per_item, names)

    params = init or initial_params(y, counts_per_item, names)
    m = params.n_items
    fixed = [bool(fix_slopes)] * m if isinstance(fix_slopes, bool) else [bool(f) for f in fix_slopes]

    history: List[float] = []
    converged = False
    change = float("inf")
    iteration = 0
    for iteration in range(1, max_iter + 1):
        kernel = GridKernel(params, grid.nodes)
        batch = posterior_batch(y, params, grid, kernel)
        ll = float(batch.log_marginal.sum())
        if history and ll < history[-1] - 1e-10 * max(1.0, abs(ll)):
            log.warning("EM log-likelihood decreased at iteration %d: %.10f -> %.10f",
                        iteration, history[-1], ll)
        history.append(ll)

        items = []
        for j, item in enumerate(params.items):
            counts = kernel.category_weights(y, batch.weights, j)
            items.append(_update_item(item, counts, grid.nodes, fixed[j]))
        updated = ItemParams(items=tuple(items))
        change = float(np.max(np.abs(pack(updated) - pack(params)))) if m else 0.0
        params = updated
        log.debug("EM iteration %d: loglik=%.6f max change=%.2e", iteration, ll, change)
        if change < tol:
            converged = True
            break

    kernel = GridKernel(params, grid.nodes)
    batch = posterior_batch(y, params, grid, kernel)
    final_ll = float(batch.log_marginal.sum())
    history.append(final_ll)
    info = _information(y, kernel, batch, info_method)

    if converged:
        log.info("EM converged in %d iterations (loglik %.4f)", iteration, final_ll)
    else:
        log.warning("EM did not converge in %d iterations (last max change %.2e)", max_iter, change)

    return FitResult(
        params=params,
        nu_hat=pack(params),
        info=info,
        log_likelihood=final_ll,
        n=int(y.shape[0]),
        converged=converged,
        iterations=iteration,
        history=tuple(history),
        info_method=info_method,
        max_change=change,
    )

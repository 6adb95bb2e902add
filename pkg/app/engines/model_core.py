"""Graded response model: category probabilities and their parameter derivatives.

Slope-intercept form: P(Y_j >= k | theta) = logistic(a_j * theta + c_jk) for
k = 1..K_j-1, with P(Y_j >= 0) = 1 and P(Y_j >= K_j) = 0. Category
probabilities are adjacent differences. K_j = 2 everywhere gives the 2PL.

The flat parameter vector is item-major: (a_1, c_11..c_1,K1-1, a_2, ...),
so item j occupies K_j consecutive slots starting at `params.offsets[j]`.

Everything here is pure: no mutable state, safe to call from many threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import expit, log_expit

from app.core.errors import CategoryRangeError
from app.core.schemas import ItemParams, ItemSpec
from app.core.settings import PROB_FLOOR

ParamVector = NDArray[np.float64]

_LOG_FLOOR = float(np.log(PROB_FLOOR))


# ─── Parameter vector layout ─────────────────────────────────────────────────


def pack(params: ItemParams) -> ParamVector:
    """ItemParams -> flat item-major vector of length sum(K_j)."""
    out: List[float] = []
    for item in params.items:
        out.append(item.a)
        out.extend(item.c)
    return np.asarray(out, dtype=float)


def unpack(nu: ArrayLike, n_categories: Sequence[int], names: Sequence[str | None] | None = None) -> ItemParams:
    """Flat vector -> ItemParams. Raises (via validation) if ordering is violated."""
    nu = np.asarray(nu, dtype=float)
    counts = [int(k) for k in n_categories]
    if nu.shape != (sum(counts),):
        raise ValueError(f"parameter vector has length {nu.size}, expected {sum(counts)}")
    items = []
    pos = 0
    for j, k in enumerate(counts):
        block = nu[pos:pos + k]
        items.append(ItemSpec(a=float(block[0]), c=tuple(float(x) for x in block[1:]),
                              name=names[j] if names is not None else None))
        pos += k
    return ItemParams(items=tuple(items))


def with_vector(params: ItemParams, nu: ArrayLike) -> ItemParams:
    """Same item structure and names as `params`, new values."""
    return unpack(nu, params.n_categories, [it.name for it in params.items])


# ─── Pattern validation ──────────────────────────────────────────────────────


def validate_pattern(pattern: ArrayLike, params: ItemParams) -> NDArray[np.int64]:
    y = np.asarray(pattern, dtype=np.int64).reshape(-1)
    if y.size != params.n_items:
        raise CategoryRangeError(
            f"pattern has {y.size} responses but the model has {params.n_items} items"
        )
    limits = params.n_categories
    bad = np.flatnonzero((y < 0) | (y >= limits))
    if bad.size:
        j = int(bad[0])
        raise CategoryRangeError(
            f"response {int(y[j])} to item {j + 1} is outside 0..{int(limits[j]) - 1}",
            item=j + 1,
        )
    return y


def validate_responses(data: ArrayLike, params: ItemParams) -> NDArray[np.int64]:
    y = np.asarray(data, dtype=np.int64)
    if y.ndim != 2 or y.shape[1] != params.n_items:
        raise CategoryRangeError(
            f"response matrix must be n x {params.n_items}, got shape {y.shape}"
        )
    limits = params.n_categories
    bad = np.argwhere((y < 0) | (y >= limits[None, :]))
    if bad.size:
        r, c = (int(v) for v in bad[0])
        raise CategoryRangeError(
            f"response {int(y[r, c])} at row {r + 1}, item {c + 1} is outside "
            f"0..{int(limits[c]) - 1}",
            row=r + 1,
            item=c + 1,
        )
    return y


# ─── Scalar probabilities ────────────────────────────────────────────────────


def cumulative_prob(item: ItemSpec, k: int, theta: ArrayLike) -> np.ndarray | float:
    """P(Y >= k | theta); 1 at k=0, 0 at k=K."""
    K = item.n_categories
    if not 0 <= k <= K:
        raise CategoryRangeError(f"cumulative index {k} outside 0..{K}")
    theta = np.asarray(theta, dtype=float)
    if k == 0:
        out = np.ones_like(theta)
    elif k == K:
        out = np.zeros_like(theta)
    else:
        out = expit(item.a * theta + item.c[k - 1])
    return float(out) if out.ndim == 0 else out


def category_prob(item: ItemSpec, k: int, theta: ArrayLike) -> np.ndarray | float:
    """P(Y = k | theta) = P(Y >= k) - P(Y >= k+1)."""
    K = item.n_categories
    if not 0 <= k < K:
        raise CategoryRangeError(f"category {k} outside 0..{K - 1}")
    theta = np.asarray(theta, dtype=float)
    out = np.exp(item_derivatives(item, np.atleast_1d(theta)).log_prob[:, k])
    return float(out[0]) if theta.ndim == 0 else out


# ─── Per-item derivative tables ──────────────────────────────────────────────


@dataclass(frozen=True)
class ItemDerivatives:
    """Tables of one item evaluated on a set of nodes.

    log_prob[q, k]      log P(Y = k | theta_q)
    score[q, k, p]      d log P_k / d psi_p, psi = (a, c_1, ..., c_{K-1})
    bend[q, k, p, r]    (d^2 P_k / d psi_p d psi_r) / P_k
    The Hessian of log P_k is bend - outer(score, score).
    """

    log_prob: NDArray[np.float64]
    score: NDArray[np.float64]
    bend: NDArray[np.float64]


def item_derivatives(item: ItemSpec, nodes: NDArray[np.float64]) -> ItemDerivatives:
    nodes = np.asarray(nodes, dtype=float)
    K = item.n_categories
    Q = nodes.size
    c = np.asarray(item.c, dtype=float)

    # Linear predictors with the boundary cases at +/- infinity.
    x = np.empty((Q, K + 1))
    x[:, 0] = np.inf
    x[:, K] = -np.inf
    x[:, 1:K] = item.a * nodes[:, None] + c[None, :]

    c_ext = np.concatenate(([np.inf], c, [-np.inf]))
    # log(1 - exp(c_{k+1} - c_k)): theta-free gap term, 0 at the boundaries.
    with np.errstate(divide="ignore"):
        log_gap = np.log(-np.expm1(c_ext[1:] - c_ext[:-1]))

    lo_hi = log_expit(x[:, :K])      # log sigma(x_k)
    lo_lo = log_expit(-x[:, 1:])     # log sigma(-x_{k+1})
    log_prob = np.maximum(lo_hi + lo_lo + log_gap[None, :], _LOG_FLOOR)

    # up_k = W_k / P_k, down_k = W_{k+1} / P_k, W = sigma(1 - sigma).
    up = np.exp(log_expit(-x[:, :K]) - lo_lo - log_gap[None, :])
    down = np.exp(log_expit(x[:, 1:]) - lo_hi - log_gap[None, :])
    bend_hi = 1.0 - 2.0 * expit(x[:, :K])
    bend_lo = 1.0 - 2.0 * expit(x[:, 1:])

    t = nodes[:, None]
    score = np.zeros((Q, K, K))
    score[:, :, 0] = t * (up - down)
    bend = np.zeros((Q, K, K, K))
    bend[:, :, 0, 0] = t * t * (up * bend_hi - down * bend_lo)
    for k in range(K):
        if k >= 1:
            score[:, k, k] = up[:, k]
            v = up[:, k] * bend_hi[:, k]
            bend[:, k, k, k] = v
            bend[:, k, 0, k] = bend[:, k, k, 0] = nodes * v
        if k + 1 <= K - 1:
            score[:, k, k + 1] = -down[:, k]
            v = down[:, k] * bend_lo[:, k]
            bend[:, k, k + 1, k + 1] = -v
            bend[:, k, 0, k + 1] = bend[:, k, k + 1, 0] = -nodes * v
    return ItemDerivatives(log_prob=log_prob, score=score, bend=bend)


# ─── Pattern-level functions ─────────────────────────────────────────────────


def conditional_log_likelihood(pattern: ArrayLike, theta: ArrayLike, params: ItemParams) -> np.ndarray | float:
    """log f(y | theta) under local independence; 0 for an empty pattern."""
    y = validate_pattern(pattern, params)
    theta = np.asarray(theta, dtype=float)
    nodes = np.atleast_1d(theta)
    total = np.zeros(nodes.size)
    for item, k in zip(params.items, y):
        total += item_derivatives(item, nodes).log_prob[:, k]
    return float(total[0]) if theta.ndim == 0 else total


def conditional_likelihood(pattern: ArrayLike, theta: ArrayLike, params: ItemParams) -> np.ndarray | float:
    return np.exp(conditional_log_likelihood(pattern, theta, params))


def score_vector(pattern: ArrayLike, theta: float, params: ItemParams) -> ParamVector:
    """Gradient of log f(y | theta) with respect to the flat parameter vector."""
    return GridKernel(params, np.array([float(theta)])).node_scores(pattern)[0]


# ─── Batched kernel ──────────────────────────────────────────────────────────


class GridKernel:
    """Item tables for one parameter set on one node set, shared by every
    batched likelihood, score and curvature computation."""

    def __init__(self, params: ItemParams, nodes: ArrayLike) -> None:
        self.params = params
        self.nodes = np.asarray(nodes, dtype=float)
        self.offsets = params.offsets
        self.n_categories = params.n_categories
        self.n_params = params.n_params
        self.tables = [item_derivatives(item, self.nodes) for item in params.items]

    def log_likelihood(self, data: NDArray[np.int64]) -> NDArray[np.float64]:
        """(n, Q) matrix of log f(y_i | theta_q)."""
        data = np.atleast_2d(data)
        out = np.zeros((data.shape[0], self.nodes.size))
        for j, tab in enumerate(self.tables):
            out += tab.log_prob[:, data[:, j]].T
        return out

    def weighted_scores(self, data: NDArray[np.int64], weights: NDArray[np.float64]) -> NDArray[np.float64]:
        """(n, P): sum_q weights[i, q] * score(y_i, theta_q)."""
        data = np.atleast_2d(data)
        out = np.zeros((data.shape[0], self.n_params))
        for j, tab in enumerate(self.tables):
            off, K = self.offsets[j], self.n_categories[j]
            out[:, off:off + K] = np.einsum("iq,qip->ip", weights, tab.score[:, data[:, j], :])
        return out

    def category_weights(self, data: NDArray[np.int64], weights: NDArray[np.float64], j: int) -> NDArray[np.float64]:
        """(K_j, Q): weights summed over respondents grouped by their answer to item j."""
        K = int(self.n_categories[j])
        onehot = (data[:, j][:, None] == np.arange(K)[None, :]).astype(float)
        return onehot.T @ weights

    def node_score_totals(self, data: NDArray[np.int64], weights: NDArray[np.float64]) -> NDArray[np.float64]:
        """(Q, P): sum_i weights[i, q] * score(y_i, theta_q)."""
        data = np.atleast_2d(data)
        out = np.zeros((self.nodes.size, self.n_params))
        for j, tab in enumerate(self.tables):
            off, K = self.offsets[j], self.n_categories[j]
            counts = self.category_weights(data, weights, j)
            out[:, off:off + K] = np.einsum("kq,qkp->qp", counts, tab.score)
        return out

    def node_scores(self, pattern: ArrayLike) -> NDArray[np.float64]:
        """(Q, P) conditional score of one pattern at every node."""
        y = validate_pattern(pattern, self.params)
        out = np.zeros((self.nodes.size, self.n_params))
        for j, tab in enumerate(self.tables):
            off, K = self.offsets[j], self.n_categories[j]
            out[:, off:off + K] = tab.score[:, y[j], :]
        return out

    def score_tensor(self, data: NDArray[np.int64]) -> NDArray[np.float64]:
        """(n, Q, P) conditional scores; use on row chunks only."""
        data = np.atleast_2d(data)
        out = np.zeros((data.shape[0], self.nodes.size, self.n_params))
        for j, tab in enumerate(self.tables):
            off, K = self.offsets[j], self.n_categories[j]
            out[:, :, off:off + K] = tab.score[:, data[:, j], :].transpose(1, 0, 2)
        return out


# ─── Sampling ────────────────────────────────────────────────────────────────


def sample_responses(params: ItemParams, theta: ArrayLike, rng: np.random.Generator) -> NDArray[np.int64]:
    """One response per (person, item): y = #{k >= 1 : u < P(Y >= k | theta)}
    with a single uniform u per cell, which is exact because the cumulative
    probabilities decrease in k."""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    out = np.empty((theta.size, params.n_items), dtype=np.int64)
    u = rng.random((theta.size, params.n_items))
    for j, item in enumerate(params.items):
        cum = expit(item.a * theta[:, None] + np.asarray(item.c)[None, :])
        out[:, j] = np.sum(u[:, j][:, None] < cum, axis=1)
    return out

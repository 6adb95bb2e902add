"""EAP scoring: posterior mean and variance of theta per response pattern,
and their analytic gradients with respect to the item parameters.

Posterior weights come from log-likelihoods with the row maximum subtracted
before exponentiation, so long tests do not underflow. Gradients use
d post_q / d nu = post_q * (s_q - sum_r post_r s_r), which gives

    d eap / d nu     = sum_q (theta_q - eap) post_q s_q
    d postvar / d nu = sum_q ((theta_q - eap)^2 - postvar) post_q s_q

with s_q the conditional score of the pattern at node q.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from app.core.schemas import ItemParams
from app.engines.model_core import GridKernel, validate_pattern, validate_responses
from app.engines.quadrature import QuadratureGrid


@dataclass(frozen=True)
class PosteriorSummary:
    eap: float
    post_var: float
    weights: NDArray[np.float64]


@dataclass(frozen=True)
class PosteriorBatch:
    """Row-wise posterior quantities for a response matrix.

    ratio[i, q] = f(y_i | theta_q) / f(y_i) = weights[i, q] / w_q.
    """

    weights: NDArray[np.float64]
    eap: NDArray[np.float64]
    post_var: NDArray[np.float64]
    log_marginal: NDArray[np.float64]
    ratio: NDArray[np.float64]


def posterior_batch(data: ArrayLike, params: ItemParams, grid: QuadratureGrid,
                    kernel: GridKernel | None = None) -> PosteriorBatch:
    y = validate_responses(data, params)
    kernel = kernel or GridKernel(params, grid.nodes)
    log_joint = kernel.log_likelihood(y) + grid.log_weights[None, :]
    top = log_joint.max(axis=1, keepdims=True)
    unnorm = np.exp(log_joint - top)
    total = unnorm.sum(axis=1, keepdims=True)
    post = unnorm / total
    log_marginal = (top + np.log(total))[:, 0]

    theta = grid.nodes
    eap = post @ theta
    # Centred second moment; never negative.
    post_var = np.einsum("iq,iq->i", post, (theta[None, :] - eap[:, None]) ** 2)
    ratio = post / grid.weights[None, :]
    return PosteriorBatch(weights=post, eap=eap, post_var=post_var,
                          log_marginal=log_marginal, ratio=ratio)


def eap_gradients(data: NDArray[np.int64], batch: PosteriorBatch, kernel: GridKernel) -> NDArray[np.float64]:
    centred = kernel.nodes[None, :] - batch.eap[:, None]
    return kernel.weighted_scores(data, centred * batch.weights)


def postvar_gradients(data: NDArray[np.int64], batch: PosteriorBatch, kernel: GridKernel) -> NDArray[np.float64]:
    centred = kernel.nodes[None, :] - batch.eap[:, None]
    spread = centred ** 2 - batch.post_var[:, None]
    return kernel.weighted_scores(data, spread * batch.weights)


# ─── Single-pattern API ──────────────────────────────────────────────────────


def posterior_summary(pattern: ArrayLike, params: ItemParams, grid: QuadratureGrid) -> PosteriorSummary:
    y = validate_pattern(pattern, params)
    batch = posterior_batch(y[None, :], params, grid)
    return PosteriorSummary(eap=float(batch.eap[0]), post_var=float(batch.post_var[0]),
                            weights=batch.weights[0])


def eap_gradient(pattern: ArrayLike, params: ItemParams, grid: QuadratureGrid) -> NDArray[np.float64]:
    y = validate_pattern(pattern, params)[None, :]
    kernel = GridKernel(params, grid.nodes)
    return eap_gradients(y, posterior_batch(y, params, grid, kernel), kernel)[0]


def postvar_gradient(pattern: ArrayLike, params: ItemParams, grid: QuadratureGrid) -> NDArray[np.float64]:
    y = validate_pattern(pattern, params)[None, :]
    kernel = GridKernel(params, grid.nodes)
    return postvar_gradients(y, posterior_batch(y, params, grid, kernel), kernel)[0]

"""Rectangular quadrature for the standard normal latent variable.

Nodes are equally spaced on [lo, hi]; weights are the normal density at each
node renormalized to sum to one. The same grid serves estimation, scoring and
the reliability integrals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import logsumexp
from scipy.stats import norm

from app.core.errors import ConfigurationError
from app.core.schemas import GridSpec, ItemParams
from app.core.settings import DEFAULT_QUAD_HI, DEFAULT_QUAD_LO, DEFAULT_QUAD_POINTS
from app.engines.model_core import GridKernel, validate_pattern, validate_responses


@dataclass(frozen=True)
class QuadratureGrid:
    nodes: NDArray[np.float64]
    weights: NDArray[np.float64]

    def __post_init__(self) -> None:
        self.nodes.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def q_count(self) -> int:
        return int(self.nodes.size)

    @property
    def log_weights(self) -> NDArray[np.float64]:
        return np.log(self.weights)

    @property
    def spec(self) -> GridSpec:
        return GridSpec(q_count=self.q_count, lo=float(self.nodes[0]), hi=float(self.nodes[-1]))


def build_grid(
    q_count: int = DEFAULT_QUAD_POINTS,
    lo: float = DEFAULT_QUAD_LO,
    hi: float = DEFAULT_QUAD_HI,
) -> QuadratureGrid:
    if int(q_count) != q_count or q_count < 3:
        raise ConfigurationError(f"quadrature needs at least 3 points, got {q_count}")
    if not (np.isfinite(lo) and np.isfinite(hi)) or not lo < hi:
        raise ConfigurationError(f"quadrature bounds must satisfy lo < hi, got [{lo}, {hi}]")
    nodes = np.linspace(lo, hi, int(q_count))
    density = norm.pdf(nodes)
    return QuadratureGrid(nodes=nodes, weights=density / density.sum())


def grid_from_spec(spec: GridSpec) -> QuadratureGrid:
    return build_grid(spec.q_count, spec.lo, spec.hi)


def marginal_log_likelihoods(data: ArrayLike, params: ItemParams, grid: QuadratureGrid,
                             kernel: GridKernel | None = None) -> NDArray[np.float64]:
    """log f(y_i) for every row, by log-sum-exp over the grid."""
    y = validate_responses(data, params)
    kernel = kernel or GridKernel(params, grid.nodes)
    return logsumexp(kernel.log_likelihood(y) + grid.log_weights[None, :], axis=1)


def marginal_likelihood(pattern: ArrayLike, params: ItemParams, grid: QuadratureGrid) -> float:
    """f(y) = sum_q f(y | theta_q) w_q."""
    y = validate_pattern(pattern, params)
    return float(np.exp(marginal_log_likelihoods(y[None, :], params, grid)[0]))

"""Shared builders for the test suite: random item parameters, response data,
central finite differences."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from app.core.schemas import ItemParams, ItemSpec
from app.engines.model_core import sample_responses


def random_params(rng: np.random.Generator, m: int, max_categories: int = 4,
                  n_categories: Optional[Sequence[int]] = None,
                  slope_range: tuple = (0.4, 2.2)) -> ItemParams:
    items = []
    for j in range(m):
        K = int(n_categories[j]) if n_categories is not None else int(rng.integers(2, max_categories + 1))
        a = float(rng.uniform(*slope_range))
        gaps = rng.uniform(0.4, 1.4, size=K - 2)
        c = float(rng.uniform(-1.0, 1.5)) - np.concatenate(([0.0], np.cumsum(gaps)))
        items.append(ItemSpec(a=a, c=tuple(float(x) for x in c), name=f"item{j + 1}"))
    return ItemParams(items=tuple(items))


def two_pl(slopes: Sequence[float], intercepts: Sequence[float]) -> ItemParams:
    return ItemParams(items=tuple(
        ItemSpec(a=float(a), c=(float(c),), name=f"item{j + 1}")
        for j, (a, c) in enumerate(zip(slopes, intercepts))
    ))


def flat_params(m: int, K: int = 2) -> ItemParams:
    """Items with zero slope: responses carry no information about theta."""
    c = tuple(float(x) for x in np.linspace(0.8, -0.8, K - 1)) if K > 2 else (0.3,)
    return ItemParams(items=tuple(ItemSpec(a=0.0, c=c) for _ in range(m)))


def simulate(params: ItemParams, n: int, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(seed))
    return sample_responses(params, rng.standard_normal(n), rng)


def random_pattern(rng: np.random.Generator, params: ItemParams) -> np.ndarray:
    return np.array([rng.integers(0, k) for k in params.n_categories], dtype=np.int64)


def central_difference(func: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
                       h: float = 1e-5) -> np.ndarray:
    """Jacobian of func at x, one column per coordinate of x."""
    x = np.asarray(x, dtype=float)
    base = np.atleast_1d(func(x))
    out = np.empty((base.size, x.size))
    for p in range(x.size):
        step = np.zeros_like(x)
        step[p] = h
        out[:, p] = (np.atleast_1d(func(x + step)) - np.atleast_1d(func(x - step))) / (2 * h)
    return out if base.size > 1 else out[0]

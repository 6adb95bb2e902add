"""Tests for GRM category probabilities, parameter layout and sampling."""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from pydantic import ValidationError
from scipy.special import expit

from app.core.errors import CategoryRangeError
from app.core.schemas import ItemParams, ItemSpec
from app.engines.model_core import (
    GridKernel,
    category_prob,
    conditional_log_likelihood,
    cumulative_prob,
    item_derivatives,
    pack,
    sample_responses,
    unpack,
    validate_pattern,
    with_vector,
)
from tests.helpers import central_difference, random_params, two_pl


@pytest.fixture
def rng():
    return np.random.default_rng(7)


# ─── Probabilities ───────────────────────────────────────────────────────────


def test_category_probabilities_sum_to_one(rng):
    theta = np.linspace(-8, 8, 101)
    for _ in range(20):
        item = random_params(rng, 1, max_categories=6).items[0]
        total = sum(category_prob(item, k, theta) for k in range(item.n_categories))
        assert_allclose(total, 1.0, atol=1e-12)


def test_binary_item_matches_logistic():
    item = ItemSpec(a=1.3, c=(-0.4,))
    theta = np.array([-2.0, 0.0, 1.5])
    assert_allclose(category_prob(item, 1, theta), expit(1.3 * theta - 0.4), rtol=1e-12)
    assert_allclose(category_prob(item, 0, theta), 1 - expit(1.3 * theta - 0.4), rtol=1e-12)


def test_cumulative_boundaries():
    item = ItemSpec(a=1.0, c=(1.0, 0.0, -1.0))
    assert cumulative_prob(item, 0, 0.3) == 1.0
    assert cumulative_prob(item, 4, 0.3) == 0.0
    assert cumulative_prob(item, 2, 0.0) == pytest.approx(0.5)


def test_flat_item_ignores_theta():
    item = ItemSpec(a=0.0, c=(0.5, -0.5))
    probs = category_prob(item, 1, np.array([-3.0, 0.0, 3.0]))
    assert_allclose(probs, expit(0.5) - expit(-0.5))


def test_extreme_theta_stays_finite():
    item = ItemSpec(a=2.0, c=(3.0, 2.9999, -3.0))
    tab = item_derivatives(item, np.array([-40.0, 40.0]))
    assert np.all(np.isfinite(tab.log_prob))
    assert np.all(np.isfinite(tab.score))


def test_category_out_of_range_raises():
    item = ItemSpec(a=1.0, c=(0.0,))
    with pytest.raises(CategoryRangeError):
        category_prob(item, 2, 0.0)


# ─── Parameter layout ────────────────────────────────────────────────────────


def test_pack_is_item_major():
    params = two_pl([1.0, 2.0], [0.5, -0.5])
    assert_allclose(pack(params), [1.0, 0.5, 2.0, -0.5])
    assert list(params.offsets) == [0, 2]


def test_unpack_restores_structure_and_names(rng):
    params = random_params(rng, 5)
    back = with_vector(params, pack(params))
    assert back == params


def test_unpack_rejects_unordered_intercepts():
    with pytest.raises(ValidationError):
        unpack([1.0, -0.5, 0.5], [3])


def test_validate_pattern_names_item():
    params = two_pl([1.0, 1.0, 1.0], [0.0, 0.0, 0.0])
    with pytest.raises(CategoryRangeError, match="item 2"):
        validate_pattern([0, 5, 1], params)


# ─── Derivative tables ───────────────────────────────────────────────────────


def test_log_probability_hessian_matches_score_differences(rng):
    nodes = np.array([-1.7, 0.2, 2.4])
    for _ in range(10):
        item = random_params(rng, 1, max_categories=5).items[0]
        tab = item_derivatives(item, nodes)
        psi = np.concatenate(([item.a], item.c))

        for k in range(item.n_categories):
            def score_k(x, k=k):
                spec = ItemSpec(a=x[0], c=tuple(x[1:]))
                return item_derivatives(spec, nodes).score[:, k, :].ravel()

            fd = central_difference(score_k, psi).reshape(nodes.size, psi.size, psi.size)
            hessian = tab.bend[:, k] - np.einsum("qa,qb->qab", tab.score[:, k], tab.score[:, k])
            assert_allclose(hessian, fd, rtol=1e-6, atol=1e-7)


def test_kernel_log_likelihood_matches_pattern_function(rng):
    params = random_params(rng, 6)
    nodes = np.linspace(-3, 3, 7)
    kernel = GridKernel(params, nodes)
    y = np.array([[k - 1 for k in params.n_categories], [0] * 6])
    table = kernel.log_likelihood(y)
    for i in range(2):
        assert_allclose(table[i], conditional_log_likelihood(y[i], nodes, params), rtol=1e-12)


def test_empty_pattern_has_zero_log_likelihood():
    params = two_pl([], [])
    assert conditional_log_likelihood([], 0.3, params) == 0.0


# ─── Sampling ────────────────────────────────────────────────────────────────


def test_symmetric_item_answers_half_the_time():
    params = two_pl([2.0], [0.0])
    rng = np.random.Generator(np.random.Philox(3))
    y = sample_responses(params, rng.standard_normal(10_000), rng)
    assert abs(y.mean() - 0.5) < 0.015


def test_flat_item_frequencies_match_intercepts():
    item = ItemSpec(a=0.0, c=(1.0, -0.5))
    params = ItemParams(items=(item,))
    rng = np.random.Generator(np.random.Philox(4))
    n = 10_000
    y = sample_responses(params, rng.standard_normal(n), rng)[:, 0]
    expected = np.array([1 - expit(1.0), expit(1.0) - expit(-0.5), expit(-0.5)])
    observed = np.bincount(y, minlength=3) / n
    se = np.sqrt(expected * (1 - expected) / n)
    assert np.all(np.abs(observed - expected) < 3 * se)


def test_sampling_is_reproducible():
    params = two_pl([1.0, 1.5], [0.2, -0.3])
    draws = []
    for _ in range(2):
        rng = np.random.Generator(np.random.Philox(11))
        draws.append(sample_responses(params, rng.standard_normal(50), rng))
    assert np.array_equal(draws[0], draws[1])

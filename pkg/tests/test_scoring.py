"""Tests for EAP scores and posterior variances."""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.special import log_expit
from scipy.stats import norm

from app.engines.quadrature import build_grid
from app.engines.reliability import enumerate_patterns
from app.engines.scoring import posterior_batch, posterior_summary
from tests.helpers import flat_params, random_params, simulate, two_pl


@pytest.fixture
def grid():
    return build_grid()


def test_uninformative_test_returns_prior(grid):
    summary = posterior_summary([1, 0, 1], flat_params(3), grid)
    assert abs(summary.eap) < 1e-12
    assert summary.post_var == pytest.approx(1.0, abs=1e-6)


def test_posterior_weights_are_a_distribution(grid):
    params = random_params(np.random.default_rng(1), 8)
    y = simulate(params, 200, seed=2)
    batch = posterior_batch(y, params, grid)
    assert_allclose(batch.weights.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(batch.post_var >= 0)
    assert_allclose(batch.ratio * grid.weights, batch.weights, rtol=1e-12)


def test_symmetric_item_gives_mirrored_scores(grid):
    params = two_pl([1.4], [0.0])
    up = posterior_summary([1], params, grid)
    down = posterior_summary([0], params, grid)
    assert up.eap == pytest.approx(-down.eap, abs=1e-12)
    assert up.post_var == pytest.approx(down.post_var, rel=1e-12)
    assert up.eap > 0


def test_more_items_shrink_posterior_variance(grid):
    short = posterior_summary([1] * 2, two_pl([1.5] * 2, [0.0] * 2), grid)
    long = posterior_summary([1, 0] * 10, two_pl([1.5] * 20, [0.0] * 20), grid)
    assert long.post_var < short.post_var < 1.0


def test_eap_is_monotone_in_correct_answers(grid):
    params = two_pl([1.0, 1.2, 0.8, 1.5], [0.3, -0.2, 0.0, 0.5])
    patterns = [[0, 0, 0, 0], [1, 0, 0, 0], [1, 1, 0, 0], [1, 1, 1, 0], [1, 1, 1, 1]]
    eaps = [posterior_summary(p, params, grid).eap for p in patterns]
    assert all(b > a for a, b in zip(eaps, eaps[1:]))


def _fine_posterior_mean(slopes, intercepts, pattern, points):
    """EAP by brute-force integration against the standard normal on a dense grid."""
    theta = np.linspace(-8.0, 8.0, points)
    eta = np.outer(theta, slopes) + np.asarray(intercepts)
    loglik = np.where(np.asarray(pattern) == 1, log_expit(eta), log_expit(-eta)).sum(axis=1)
    logpost = loglik + norm.logpdf(theta)
    weights = np.exp(logpost - logpost.max())
    return float(weights @ theta / weights.sum())


def test_single_item_eap_matches_dense_integration(grid):
    summary = posterior_summary([1], two_pl([1.5], [0.3]), grid)
    assert summary.eap == pytest.approx(_fine_posterior_mean([1.5], [0.3], [1], 10_001), abs=1e-4)


def test_long_test_scores_match_dense_integration(grid):
    slopes, intercepts = [2.5] * 400, np.linspace(2, -2, 400)
    y = np.ones((1, 400), dtype=np.int64)
    batch = posterior_batch(y, two_pl(slopes, intercepts), grid)
    assert np.isfinite(batch.eap[0]) and np.isfinite(batch.post_var[0])
    assert batch.eap[0] == pytest.approx(_fine_posterior_mean(slopes, intercepts, y[0], 20_001), abs=1e-4)


def test_total_variance_is_recovered_over_all_patterns(grid):
    params = random_params(np.random.default_rng(3), 4, n_categories=[2, 3, 2, 4])
    eap_mean = second = 0.0
    for chunk in enumerate_patterns(params):
        batch = posterior_batch(chunk, params, grid)
        f = np.exp(batch.log_marginal)
        eap_mean += f @ batch.eap
        second += f @ (batch.eap ** 2 + batch.post_var)
    assert abs(second - eap_mean ** 2 - 1.0) < 2e-3

import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robust_rlhf.robust_stats import (
    RobustCovariance,
    RobustMean,
    RobustMeanConfig,
    robust_covariance,
    robust_mean,
    scale_estimate,
)


@pytest.mark.parametrize("method", ["spectral-filter", "trimmed-coordinate"])
def test_identical_points_return_the_point(method):
    c = np.array([0.3, -1.2, 5.0])
    X = np.tile(c, (50, 1))
    assert np.array_equal(robust_mean(X, RobustMeanConfig(0.1, method)), c)


@pytest.mark.parametrize("method", ["spectral-filter", "trimmed-coordinate"])
def test_zero_epsilon_is_sample_mean(method):
    X = np.random.default_rng(0).normal(size=(200, 5))
    assert np.max(np.abs(robust_mean(X, RobustMeanConfig(0.0, method)) - X.mean(axis=0))) <= 1e-12


def _planted(seed, n=10_000, d=4, eps=0.1, dist=100.0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    k = int(np.floor(eps * n))
    direction = np.ones(d) / np.sqrt(d)
    X[:k] = dist * direction + 0.1 * rng.normal(size=(k, d))
    clean = np.ones(n, dtype=bool)
    clean[:k] = False
    return X, clean


@pytest.mark.parametrize("method", ["spectral-filter", "trimmed-coordinate"])
def test_planted_outliers(method):
    eps = 0.1
    errors, naive = [], []
    for seed in range(5):
        X, clean = _planted(seed)
        est = robust_mean(X, RobustMeanConfig(eps, method))
        errors.append(np.linalg.norm(est))
        naive.append(np.linalg.norm(X.mean(axis=0)))
        # reference oracle: mean of the clean subset
        assert np.linalg.norm(est - X[clean].mean(axis=0)) <= 4 * np.sqrt(eps)
    assert np.median(errors) <= 4 * np.sqrt(eps)
    assert np.median(naive) == pytest.approx(10.0, rel=0.05)


def test_covariance_examples():
    e1 = np.zeros(3)
    e1[0] = 1.0
    X = np.tile(e1, (20, 1))
    assert np.array_equal(robust_covariance(X, epsilon=0.1), np.outer(e1, e1))
    Y = np.random.default_rng(1).normal(size=(100, 3))
    assert np.allclose(robust_covariance(Y, epsilon=0.0), Y.T @ Y / 100, atol=1e-12)


def test_covariance_with_planted_outer_products():
    rng = np.random.default_rng(2)
    n, d, eps = 5000, 3, 0.1
    X = rng.normal(size=(n, d))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    k = int(eps * n)
    X[:k] = np.array([1.0, 0.0, 0.0]) * 1.0  # all corrupted points share one direction
    clean_cov = X[k:].T @ X[k:] / (n - k)
    est = robust_covariance(X, epsilon=eps)
    assert np.linalg.norm(est - clean_cov, 2) <= 4 * np.sqrt(eps)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.0, 0.05, 0.2]))
def test_covariance_symmetric_psd(seed, eps):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(60, 3)) * rng.uniform(0.1, 3.0, size=3)
    M = robust_covariance(X, epsilon=eps)
    assert np.array_equal(M, M.T)
    assert np.linalg.eigvalsh(M).min() >= -1e-8


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["spectral-filter", "trimmed-coordinate"]))
def test_permutation_invariance(seed, method):
    rng = np.random.default_rng(seed)
    X = rng.standard_t(3, size=(80, 3))
    X[:8] += 20.0
    perm = rng.permutation(80)
    cfg = RobustMeanConfig(0.1, method)
    assert np.allclose(robust_mean(X, cfg), robust_mean(X[perm], cfg), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 12), st.floats(0.01, 0.49), st.floats(1e-6, 10.0))
def test_filter_always_keeps_a_point(seed, n, eps, sigma):
    # ceil(eps m) < m whenever m >= 2, and a single point has zero spread,
    # so the filter returns a mean instead of emptying the sample
    X = np.random.default_rng(seed).normal(size=(n, 2)) * 10
    cfg = RobustMeanConfig(eps, sigma_bound=sigma, max_rounds=50)
    out = robust_mean(X, cfg)
    assert np.all(np.isfinite(out))


def test_errors_and_warnings(caplog):
    with pytest.raises(ValueError):
        RobustMeanConfig(0.5)
    with pytest.raises(ValueError):
        RobustMeanConfig(0.1, method="median")
    with pytest.raises(ValueError):
        robust_mean(np.arange(10.0).reshape(2, 5), epsilon=0.1)
    with pytest.raises(ValueError):
        robust_mean(np.zeros((10, 2)), RobustMeanConfig(0.1), epsilon=0.2)
    with caplog.at_level(logging.WARNING):
        robust_mean(np.random.default_rng(0).normal(size=(20, 4)), epsilon=0.1)
    assert "sample size" in caplog.text


def test_scale_estimate():
    X = np.random.default_rng(3).normal(size=(20_000, 2)) * [1.0, 2.0]
    assert scale_estimate(X) == pytest.approx(4.0, rel=0.1)
    sparse = np.zeros((100, 1))
    sparse[:10] = 1.0
    assert scale_estimate(sparse, 0.0) > 0
    assert scale_estimate(np.ones((5, 3))) == 0.0


def test_estimators():
    X, _ = _planted(0, n=2000)
    m = RobustMean(epsilon=0.1).fit(X)
    assert np.linalg.norm(m.location_) <= 4 * np.sqrt(0.1)
    assert np.allclose(m.transform(X), X - m.location_)
    c = RobustCovariance(epsilon=0.0).fit(X[:100])
    assert np.allclose(c.covariance_, X[:100].T @ X[:100] / 100)
    assert m.get_params()["method"] == "spectral-filter"

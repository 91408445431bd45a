"""Outlier-robust mean and second-moment estimation under epsilon-contamination."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import trim_mean
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

__all__ = [
    "RobustMeanConfig",
    "robust_mean",
    "robust_covariance",
    "scale_estimate",
    "RobustMean",
    "RobustCovariance",
    "FilterDegenerate",
]

logger = logging.getLogger(__name__)

METHODS = ("spectral-filter", "trimmed-coordinate")


class FilterDegenerate(ValueError):
    """Raised when the spectral filter has discarded (almost) every point."""


@dataclass(frozen=True)
class RobustMeanConfig:
    """Settings shared by :func:`robust_mean` and :func:`robust_covariance`.

    ``sigma_bound`` is the variance proxy of the clean distribution along any
    unit direction; when ``None`` it is estimated from the data with
    :func:`scale_estimate`.
    """

    epsilon: float = 0.0
    method: str = "spectral-filter"
    max_rounds: int = 10
    sigma_bound: float | None = None
    threshold: float = 9.0

    def __post_init__(self):
        if not 0.0 <= self.epsilon < 0.5:
            raise ValueError("epsilon must lie in [0, 0.5)")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be at least 1")
        if self.sigma_bound is not None and not self.sigma_bound > 0:
            raise ValueError("sigma_bound must be positive")


def _config(config, epsilon) -> RobustMeanConfig:
    if config is None:
        return RobustMeanConfig(epsilon=0.0 if epsilon is None else epsilon)
    if epsilon is not None and epsilon != config.epsilon:
        raise ValueError("epsilon given twice with different values")
    return config


def scale_estimate(points, epsilon: float = 0.0) -> float:
    """Largest per-coordinate variance proxy.

    Uses the normal-consistent MAD, ``(1.4826 * MAD)^2``; coordinates whose MAD is
    zero (e.g. sparse indicator data) fall back to the variance of the central
    ``1 - 2 epsilon`` quantile range so the proxy is never identically zero on
    non-constant data.
    """
    X = np.asarray(points, dtype=float)
    n = X.shape[0]
    lo, hi = (n - 1) // 2, n // 2
    ordered = np.sort(X, axis=0)
    med = 0.5 * (ordered[lo] + ordered[hi])
    dev = np.sort(np.abs(X - med), axis=0)
    mad_var = (1.4826 * 0.5 * (dev[lo] + dev[hi])) ** 2
    cut = int(np.floor(epsilon * n))
    central = ordered[cut : n - cut]
    trimmed_var = central.var(axis=0) if central.shape[0] > 0 else np.zeros(X.shape[1])
    return float(np.max(np.maximum(mad_var, trimmed_var)))


def _spectral_filter(X, cfg: RobustMeanConfig):
    n = X.shape[0]
    sigma2 = cfg.sigma_bound if cfg.sigma_bound is not None else scale_estimate(X, cfg.epsilon)
    # scale-aware floor so exactly constant data pass the first check
    sigma2 = max(sigma2, 1e-12 * (1.0 + float(np.max(np.abs(X))) ** 2))
    keep = np.arange(n)
    for _ in range(cfg.max_rounds):
        Y = X[keep]
        mean = Y.mean(axis=0)
        centred = Y - mean
        cov = centred.T @ centred / Y.shape[0]
        evals, evecs = np.linalg.eigh(cov)
        if evals[-1] <= cfg.threshold * sigma2:
            return mean
        scores = (centred @ evecs[:, -1]) ** 2
        n_drop = max(1, int(np.ceil(cfg.epsilon * Y.shape[0])))
        order = np.lexsort((keep, -scores))
        keep = np.sort(keep[order[n_drop:]])
        if keep.size < 1:
            raise FilterDegenerate("filter degenerate: every point was removed; epsilon too large or sigma misestimated")
    return X[keep].mean(axis=0)


def robust_mean(points, config: RobustMeanConfig | None = None, *, epsilon=None) -> np.ndarray:
    """Mean of an epsilon-corrupted sample.

    Parameters
    ----------
    points : array of shape (n, d)
    config : RobustMeanConfig, optional
    epsilon : float, optional
        Shortcut for ``RobustMeanConfig(epsilon=...)``.

    Returns
    -------
    ndarray of shape (d,)

    Notes
    -----
    The spectral filter repeatedly checks the top eigenvalue of the empirical
    covariance against ``threshold * sigma^2``; while it is too large it removes
    the ``ceil(epsilon n)`` points with the largest squared projection on the
    top eigenvector. With ``epsilon = 0`` both methods return the sample mean.
    """
    cfg = _config(config, epsilon)
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("points must be a non-empty (n, d) array")
    if np.all(X == X[0]):
        # floating-point summation would not return the common point exactly
        return X[0].copy()
    if cfg.epsilon == 0.0:
        return X.mean(axis=0)
    if cfg.method == "trimmed-coordinate":
        return np.asarray(trim_mean(X, cfg.epsilon, axis=0), dtype=float)
    n, d = X.shape
    if n < max(2, d):
        raise ValueError("spectral filter needs at least max(2, d) points")
    if n < d / cfg.epsilon * max(np.log(d), 1.0):
        logger.warning("robust_mean: %d points is below the (d / epsilon) log d sample size; the error bound may not hold", n)
    return _spectral_filter(X, cfg)


def robust_covariance(points, config: RobustMeanConfig | None = None, *, epsilon=None) -> np.ndarray:
    """Robust second-moment matrix ``E[x x^T]`` from flattened outer products."""
    X = np.asarray(points, dtype=float)
    if X.ndim != 2:
        raise ValueError("points must be an (n, d) array")
    d = X.shape[1]
    outer = np.einsum("ni,nj->nij", X, X).reshape(X.shape[0], d * d)
    cfg = _config(config, epsilon)
    if cfg.epsilon > 0 and cfg.method == "spectral-filter" and X.shape[0] < d * d:
        # fewer points than flattened coordinates: the covariance check is
        # rank-deficient anyway, fall back to the coordinate-wise estimator
        cfg = RobustMeanConfig(cfg.epsilon, "trimmed-coordinate", cfg.max_rounds, cfg.sigma_bound, cfg.threshold)
    M = robust_mean(outer, cfg).reshape(d, d)
    return 0.5 * (M + M.T)


class RobustMean(BaseEstimator):
    """Estimator wrapper around :func:`robust_mean`; the result is ``location_``."""

    def __init__(self, epsilon=0.1, method="spectral-filter", max_rounds=10, sigma_bound=None, threshold=9.0):
        self.epsilon = epsilon
        self.method = method
        self.max_rounds = max_rounds
        self.sigma_bound = sigma_bound
        self.threshold = threshold

    def _cfg(self):
        return RobustMeanConfig(self.epsilon, self.method, self.max_rounds, self.sigma_bound, self.threshold)

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        self.location_ = robust_mean(X, self._cfg())
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "location_")
        return check_array(X, dtype=float) - self.location_


class RobustCovariance(RobustMean):
    """Robust uncentred second moment; the result is ``covariance_``."""

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        self.covariance_ = robust_covariance(X, self._cfg())
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "covariance_")
        return check_array(X, dtype=float) @ self.covariance_

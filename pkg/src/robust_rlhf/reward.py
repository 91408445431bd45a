"""Trimmed maximum-likelihood reward estimation and the likelihood confidence set."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, log_expit
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import check_delta, check_epsilon, check_labels, project_ball

__all__ = [
    "pointwise_log_likelihood",
    "log_likelihood",
    "log_likelihood_grad",
    "TrimmedMLE",
    "RewardEstimate",
    "trimmed_mle",
    "subset_size",
    "top_subset",
    "stationarity_gap",
    "confidence_zeta",
    "ConfidenceSet",
]


def pointwise_log_likelihood(theta, X, o) -> np.ndarray:
    """``log sigma(o_n theta . x_n)`` for every row."""
    return log_expit(o * (X @ theta))


def log_likelihood(theta, X, o) -> float:
    """Average log-likelihood of the labels under the Bradley-Terry model."""
    return float(np.mean(pointwise_log_likelihood(theta, X, o)))


def log_likelihood_grad(theta, X, o) -> np.ndarray:
    """Gradient of :func:`log_likelihood`; per point it is ``o x / (1 + exp(o theta . x))``."""
    weights = o * expit(-o * (X @ theta))
    return weights @ X / X.shape[0]


def subset_size(epsilon: float, N: int) -> int:
    """``ceil((1 - eps) N)``, guarded against round-off in the product."""
    return int(np.ceil((1.0 - epsilon) * N - 1e-9))


def top_subset(theta, X, o, k: int) -> np.ndarray:
    """Indices of the ``k`` highest per-point log-likelihoods, ties broken by index."""
    ll = pointwise_log_likelihood(theta, X, o)
    order = np.lexsort((np.arange(ll.size), -ll))
    return np.sort(order[:k])


def _curvature_bound(X) -> float:
    # the log-sigmoid has curvature at most 1/4, so this bounds the Hessian norm
    if X.shape[0] == 0:
        return 1.0
    return max(0.25 * np.linalg.norm(X, 2) ** 2 / X.shape[0], 1e-12)


def _maximize_on_ball(X, o, theta0, radius, tol=1e-8, max_iter=10000):
    """Projected gradient ascent with Armijo backtracking along the projection arc.

    Trial steps follow the Barzilai-Borwein rule and never drop below ``1/curv``,
    where the Armijo test is guaranteed to pass. Stops when the gradient mapping
    at step ``1/curv`` has norm at most ``tol``.
    """
    curv = _curvature_bound(X)
    theta = project_ball(np.asarray(theta0, dtype=float), radius)
    f = log_likelihood(theta, X, o)
    g = log_likelihood_grad(theta, X, o)
    step = 1.0 / curv
    for it in range(max_iter):
        mapping = (project_ball(theta + g / curv, radius) - theta) * curv
        if np.linalg.norm(mapping) <= tol:
            return theta, f, it, True
        t = step
        while True:
            cand = project_ball(theta + t * g, radius)
            fc = log_likelihood(cand, X, o)
            if fc >= f + 1e-4 * g @ (cand - theta) or t <= 1.0 / curv:
                break
            t = max(t / 2, 1.0 / curv)
        gc = log_likelihood_grad(cand, X, o)
        s, y = cand - theta, gc - g
        sy = s @ y
        step = (s @ s) / -sy if sy < 0 else 1.0 / curv
        step = min(max(step, 1.0 / curv), 1e6 / curv)
        if fc < f:
            # round-off only; keep the better point
            return theta, f, it, True
        theta, f, g = cand, fc, gc
    return theta, f, max_iter, False


@dataclass
class RewardEstimate:
    theta_hat: np.ndarray
    selected_subset: np.ndarray
    log_likelihood: float
    stationarity: float
    converged: bool
    n_outer_iter: int
    objective_path: list = field(default_factory=list)


class TrimmedMLE(BaseEstimator):
    """Trimmed Bradley-Terry maximum likelihood by alternating optimisation.

    Each round keeps the ``ceil((1 - epsilon) N)`` points with the highest
    log-likelihood under the current parameter, then maximises their average
    log-likelihood over the ball ``||theta|| <= radius`` starting from the current
    parameter. It stops at the first round whose improvement is at most
    ``eta_slack`` and returns that round's starting parameter, which is the one
    the stopping certificate speaks about.

    Parameters
    ----------
    epsilon : float, default=0.0
        Fraction of points to trim.
    eta_slack : float or None
        Stopping slack on the improvement of the summed subset log-likelihood.
        Defaults to ``epsilon**2`` (``1e-10`` when epsilon is 0).
    radius : float or None
        Ball radius; defaults to ``sqrt(n_features)``.
    max_outer_iter : int, default=100
    tol : float, default=1e-8
        Inner solver tolerance on the gradient-mapping norm.
    max_inner_iter : int, default=10000

    Attributes
    ----------
    coef_ : ndarray of shape (n_features,)
    selected_subset_ : ndarray of int
    objective_path_ : list of float
        Average top-subset log-likelihood at each visited parameter.
    converged_ : bool
    n_outer_iter_ : int
    """

    def __init__(self, epsilon=0.0, eta_slack=None, radius=None, max_outer_iter=100, tol=1e-8, max_inner_iter=10000):
        self.epsilon = epsilon
        self.eta_slack = eta_slack
        self.radius = radius
        self.max_outer_iter = max_outer_iter
        self.tol = tol
        self.max_inner_iter = max_inner_iter

    def _resolved(self, n_features):
        eps = check_epsilon(self.epsilon)
        eta = self.eta_slack if self.eta_slack is not None else (eps**2 if eps > 0 else 1e-10)
        if not eta > 0:
            raise ValueError("eta_slack must be positive")
        radius = self.radius if self.radius is not None else np.sqrt(n_features)
        if not radius > 0:
            raise ValueError("radius must be positive")
        return eps, eta, float(radius)

    def fit(self, X, y):
        X = check_array(X, dtype=float)
        o = check_labels(y)
        if o.shape[0] != X.shape[0]:
            raise ValueError("X and y have inconsistent lengths")
        if X.shape[0] < 2:
            raise ValueError("need at least 2 comparisons")
        eps, eta, radius = self._resolved(X.shape[1])
        k = subset_size(eps, X.shape[0])
        theta = np.zeros(X.shape[1])
        path = []
        converged = False
        subset = top_subset(theta, X, o, k)
        for it in range(self.max_outer_iter):
            subset = top_subset(theta, X, o, k)
            current = log_likelihood(theta, X[subset], o[subset])
            path.append(current)
            if len(path) > 1 and path[-1] < path[-2] - 1e-12:
                raise AssertionError("alternating optimisation decreased the subset likelihood")
            new, value, _, _ = _maximize_on_ball(X[subset], o[subset], theta, radius, self.tol, self.max_inner_iter)
            # the slack applies to the summed subset log-likelihood
            if (value - current) * k <= eta:
                converged = True
                break
            theta = new
        else:
            subset = top_subset(theta, X, o, k)
            path.append(log_likelihood(theta, X[subset], o[subset]))
            warnings.warn("trimmed MLE hit max_outer_iter; returning the last (best) iterate", RuntimeWarning)
        self.coef_ = theta
        self.selected_subset_ = subset
        self.objective_path_ = path
        self.converged_ = converged
        self.n_outer_iter_ = len(path)
        self.radius_ = radius
        self.log_likelihood_ = log_likelihood(theta, X[subset], o[subset])
        g = log_likelihood_grad(theta, X[subset], o[subset]) * k / X.shape[0]
        curv = _curvature_bound(X)
        self.stationarity_ = float(np.linalg.norm(project_ball(theta + g / curv, radius) - theta) * curv)
        self.classes_ = np.array([-1, 1])
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        return check_array(X, dtype=float) @ self.coef_

    def predict_proba(self, X):
        p = expit(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return np.where(self.decision_function(X) >= 0, 1, -1)

    def score(self, X, y):
        """Average log-likelihood of ``y`` (higher is better)."""
        check_is_fitted(self, "coef_")
        return log_likelihood(self.coef_, check_array(X, dtype=float), check_labels(y))

    def to_estimate(self) -> RewardEstimate:
        check_is_fitted(self, "coef_")
        return RewardEstimate(
            theta_hat=self.coef_.copy(),
            selected_subset=self.selected_subset_.copy(),
            log_likelihood=self.log_likelihood_,
            stationarity=self.stationarity_,
            converged=self.converged_,
            n_outer_iter=self.n_outer_iter_,
            objective_path=list(self.objective_path_),
        )


def trimmed_mle(X, o, epsilon=0.0, **params) -> RewardEstimate:
    """Functional wrapper around :class:`TrimmedMLE`."""
    return TrimmedMLE(epsilon=epsilon, **params).fit(X, o).to_estimate()


def stationarity_gap(theta_hat, X, o, epsilon, theta_ref) -> float:
    """Directional derivative of the trimmed objective at ``theta_hat`` towards ``theta_ref``.

    The objective is ``(1/N) sum_{n in S} log P(o_n | x_n)`` with ``S`` the top
    ``ceil((1-eps) N)`` subset under ``theta_hat``.
    """
    X = np.asarray(X, dtype=float)
    o = np.asarray(o, dtype=float)
    direction = np.asarray(theta_ref, dtype=float) - theta_hat
    norm = np.linalg.norm(direction)
    if norm == 0:
        raise ValueError("theta_ref must differ from theta_hat")
    S = top_subset(theta_hat, X, o, subset_size(epsilon, X.shape[0]))
    g = log_likelihood_grad(theta_hat, X[S], o[S]) * len(S) / X.shape[0]
    return float(g @ direction / norm)


def confidence_zeta(epsilon, H, d, N, delta) -> float:
    """Likelihood slack ``6 eps H sqrt(d) + 2 (d / N) ln(H N / delta)``."""
    delta = check_delta(delta)
    return 6.0 * epsilon * H * np.sqrt(d) + 2.0 * d / N * np.log(H * N / delta)


class ConfidenceSet:
    """``{theta : ||theta|| <= radius, avg loglik(theta) - avg loglik(theta_hat) >= -zeta}``.

    The likelihood uses the labelled form ``log sigma(o_n theta . x_n)``, the same
    objective the estimator maximises.
    """

    def __init__(self, theta_hat, zeta, X, o, radius=None):
        self.X = np.asarray(X, dtype=float)
        self.o = check_labels(o)
        self.theta_hat = np.asarray(theta_hat, dtype=float)
        self.zeta = float(zeta)
        self.radius = float(np.sqrt(self.X.shape[1]) if radius is None else radius)
        if self.zeta <= 0:
            raise ValueError("zeta must be positive")
        self.baseline = log_likelihood(self.theta_hat, self.X, self.o)
        if np.linalg.norm(self.theta_hat) > self.radius * (1 + 1e-9):
            raise AssertionError("the centre estimate must lie in the ball")
        self._hess_data = None

    def slack(self, theta) -> float:
        """Nonnegative exactly on the likelihood superlevel set."""
        return log_likelihood(theta, self.X, self.o) - self.baseline + self.zeta

    def contains(self, theta, tol: float = 1e-9) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.linalg.norm(theta) <= self.radius * (1 + tol) and self.slack(theta) >= -tol)

    __contains__ = contains

    # -- projection -----------------------------------------------------------
    def _newton(self, target, lam, nu, start):
        """Minimise ``(1+nu)/2 ||t||^2 - target.t - lam * loglik(t)`` (strongly convex)."""
        X, o, n = self.X, self.o, self.X.shape[0]
        t = start.copy()

        def objective(v):
            return 0.5 * (1 + nu) * v @ v - target @ v - lam * log_likelihood(v, X, o)

        fval = objective(t)
        for _ in range(100):
            z = o * (X @ t)
            grad = (1 + nu) * t - target - lam * ((o * expit(-z)) @ X) / n
            if np.linalg.norm(grad) <= 1e-11 * (1 + np.linalg.norm(target) + lam):
                break
            w = expit(z) * expit(-z)
            hess = (1 + nu) * np.eye(t.size) + lam * (X.T * w) @ X / n
            step = np.linalg.solve(hess, grad)
            if grad @ step <= 1e-24 * (1.0 + abs(fval)):
                break
            a = 1.0
            while True:
                cand = t - a * step
                fc = objective(cand)
                if fc <= fval - 1e-4 * a * grad @ step or a < 1e-6:
                    break
                a /= 2
            if fc >= fval:
                break
            t, fval = cand, fc
        return t

    def _ball_constrained(self, target, lam, start):
        """argmin over the ball of ``1/2 ||t - target||^2 - lam * loglik(t)`` and its ball multiplier."""
        t = self._newton(target, lam, 0.0, start)
        if np.linalg.norm(t) <= self.radius:
            return t, 0.0
        hi = 1.0
        while np.linalg.norm(self._newton(target, lam, hi, t)) > self.radius:
            hi *= 2.0
        nu = brentq(lambda v: np.linalg.norm(self._newton(target, lam, v, t)) - self.radius, 0.0, hi, xtol=1e-12, rtol=1e-10)
        sol = project_ball(self._newton(target, lam, nu, t), self.radius)
        return sol, nu

    def project(self, theta, return_multipliers: bool = False):
        """Euclidean projection onto the set.

        The ball projection is returned when it already satisfies the likelihood
        constraint. Otherwise the likelihood multiplier ``lam`` is located by
        bracketed root finding on ``slack(theta(lam)) = 0``, where ``theta(lam)``
        minimises ``1/2 ||t - theta||^2 - lam * loglik(t)`` over the ball (a second,
        inner multiplier handles the ball).
        """
        theta = np.asarray(theta, dtype=float)
        ball = project_ball(theta, self.radius)
        if self.slack(ball) >= 0:
            nu = np.linalg.norm(theta) / self.radius - 1.0 if ball is not theta else 0.0
            return (ball, 0.0, max(nu, 0.0)) if return_multipliers else ball
        cache = {}

        def solve(lam):
            if lam not in cache:
                start = self.theta_hat if not cache else cache[max(cache)][0]
                cache[lam] = self._ball_constrained(theta, lam, start)
            return cache[lam]

        hi = 1.0
        while self.slack(solve(hi)[0]) < 0:
            hi *= 4.0
            if hi > 1e12:
                raise AssertionError("confidence set projection failed to bracket the multiplier")
        lam = brentq(lambda v: self.slack(solve(v)[0]), 0.0, hi, xtol=1e-12, rtol=1e-10)
        sol, nu = solve(lam)
        if self.slack(sol) < 0:
            # nudge towards the centre, which has slack zeta > 0, to land inside exactly
            s0, s1 = self.slack(sol), self.zeta
            step = min(1.0, 2 * (-s0) / (s1 - s0))
            while self.slack(sol + step * (self.theta_hat - sol)) < 0:
                step *= 2
            sol = sol + step * (self.theta_hat - sol)
        return (sol, lam, nu) if return_multipliers else sol

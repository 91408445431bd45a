"""Gaussian-smoothing subgradients from a biased value oracle, and projected
subgradient descent driven by them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import as_generator

__all__ = [
    "SmoothingConfig",
    "truncated_normal",
    "gaussian_subgradient",
    "biased_pgd",
    "PGDTrace",
]


@dataclass(frozen=True)
class SmoothingConfig:
    """Smoothing and step-size settings.

    Parameters
    ----------
    K : int
        Directions per gradient estimate.
    mu_smooth : float, optional
        Smoothing radius. When ``None`` it is derived from ``noise_level`` by
        ``mu_rule``: ``"default"`` gives ``sqrt(noise) / sqrt(8 dim)`` and ``"lipschitz"``
        gives ``sqrt(noise) / (diam(E) sqrt(L))``.
    noise_level : float, optional
        Uniform bound on the oracle error.
    box_halfwidth : float
        Directions are standard normal restricted to ``E = [-h, h]^dim``.
    L_lipschitz, M_bound, D_diam : float
        Lipschitz constant, bound on ``|f|`` and diameter of the feasible set;
        they set the default step ``D mu / (M diam(E))``.
    """

    K: int = 100
    mu_smooth: float | None = None
    noise_level: float | None = None
    box_halfwidth: float = 4.0
    L_lipschitz: float = 1.0
    M_bound: float = 1.0
    D_diam: float = 1.0
    mu_rule: str = "default"

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise ValueError("K must be a positive integer")
        if self.mu_smooth is not None and not self.mu_smooth > 0:
            raise ValueError("mu_smooth must be positive")
        if self.noise_level is not None and not self.noise_level > 0:
            raise ValueError("noise_level must be positive")
        if self.mu_rule not in ("default", "lipschitz"):
            raise ValueError("mu_rule must be 'default' or 'lipschitz'")
        for name in ("box_halfwidth", "L_lipschitz", "M_bound", "D_diam"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def box_diameter(self, dim: int) -> float:
        """Euclidean diameter of ``[-h, h]^dim``."""
        return 2.0 * self.box_halfwidth * np.sqrt(dim)

    def smoothing_radius(self, dim: int) -> float:
        if self.mu_smooth is not None:
            return float(self.mu_smooth)
        if self.noise_level is None:
            raise ValueError("either mu_smooth or noise_level must be set")
        if self.mu_rule == "default":
            return float(np.sqrt(self.noise_level) / np.sqrt(8.0 * dim))
        return float(np.sqrt(self.noise_level) / (self.box_diameter(dim) * np.sqrt(self.L_lipschitz)))

    def step_size(self, dim: int) -> float:
        return float(self.D_diam * self.smoothing_radius(dim) / (self.M_bound * self.box_diameter(dim)))

    def slack_bound(self, dim: int, delta: float = 0.1, C: float = 1.0) -> float:
        """Approximate-subgradient slack: concentration + oracle-noise + smoothing terms."""
        mu = self.smoothing_radius(dim)
        noise = 0.0 if self.noise_level is None else self.noise_level
        conc = np.sqrt(C / self.K) * 4.0 * self.M_bound / mu * np.sqrt(2.0 * dim * np.log(2.0 / delta))
        return float(conc + 2.0 * noise / mu * self.box_diameter(dim) + mu * self.L_lipschitz * np.sqrt(dim))


def truncated_normal(rng, size, halfwidth: float = 4.0) -> np.ndarray:
    """Standard normal draws restricted to ``[-halfwidth, halfwidth]`` by per-coordinate rejection."""
    rng = as_generator(rng)
    out = rng.standard_normal(size)
    bad = np.abs(out) > halfwidth
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > halfwidth
    return out


def gaussian_subgradient(
    oracle,
    theta,
    config: SmoothingConfig,
    rng=None,
    *,
    reference_feature=None,
    base_value: float | None = None,
    vectorized: bool = False,
) -> np.ndarray:
    """Smoothed-gradient estimate of ``f(theta) = oracle(theta) - <reference_feature, theta>``.

    Draws ``u_1..u_K`` from the standard normal restricted to the box and returns
    ``mean_k [(V(theta + mu u_k) - V(theta) - mu <ref, u_k>) / mu] u_k``.

    Parameters
    ----------
    oracle : callable
        ``theta -> float``, or ``(K, dim) -> (K,)`` when ``vectorized``.
    base_value : float, optional
        ``oracle(theta)`` if already known; otherwise one extra call is made.
    """
    rng = as_generator(rng)
    theta = np.asarray(theta, dtype=float)
    dim = theta.size
    mu = config.smoothing_radius(dim)
    U = truncated_normal(rng, (config.K, dim), config.box_halfwidth)
    ref = np.zeros(dim) if reference_feature is None else np.asarray(reference_feature, dtype=float).reshape(-1)
    if base_value is None:
        base_value = float(oracle(theta[None])[0]) if vectorized else float(oracle(theta))
    points = theta.reshape(1, -1) + mu * U
    if vectorized:
        values = np.asarray(oracle(points), dtype=float).reshape(config.K)
    else:
        values = np.array([float(oracle(p.reshape(theta.shape))) for p in points])
    coef = (values - base_value - mu * (U @ ref)) / mu
    return (coef @ U / config.K).reshape(theta.shape)


@dataclass
class PGDTrace:
    """Iterates visited by :func:`biased_pgd` (``theta_0`` first)."""

    iterates: np.ndarray
    step: float
    smoothing_radius: float


def biased_pgd(
    oracle,
    projection,
    theta0,
    config: SmoothingConfig,
    T: int,
    eta: float | None = None,
    rng=None,
    *,
    reference_feature=None,
    vectorized: bool = False,
    feasible=None,
    return_trace: bool = False,
):
    """Projected subgradient descent with Gaussian-smoothing gradients.

    Runs ``theta_{t+1} = projection(theta_t - eta g_t)`` for ``T`` steps and returns the
    average of ``theta_1..theta_T`` (``theta0`` itself when ``T = 0``). ``eta``
    defaults to :meth:`SmoothingConfig.step_size`. If ``feasible`` is given every
    iterate is checked with it.
    """
    rng = as_generator(rng)
    theta = np.asarray(theta0, dtype=float).copy()
    dim = theta.size
    if int(T) != T or T < 0:
        raise ValueError("T must be a nonnegative integer")
    step = config.step_size(dim) if eta is None else float(eta)
    if step < 0:
        raise ValueError("eta must be nonnegative")
    if feasible is not None and not feasible(theta):
        raise ValueError("theta0 must be feasible")
    path = [theta.copy()]
    total = np.zeros_like(theta)
    for _ in range(int(T)):
        g = gaussian_subgradient(oracle, theta, config, rng, reference_feature=reference_feature, vectorized=vectorized)
        theta = np.asarray(projection(theta - step * g), dtype=float)
        if feasible is not None and not feasible(theta):
            raise AssertionError("projected iterate left the feasible set")
        total += theta
        path.append(theta.copy())
    theta_bar = path[0] if T == 0 else total / T
    if return_trace:
        return theta_bar, PGDTrace(np.array(path), step, config.smoothing_radius(dim))
    return theta_bar

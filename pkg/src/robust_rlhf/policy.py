"""Markovian per-step policies: tabular, softmax-linear and finite mixtures."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

__all__ = [
    "TabularPolicy",
    "SoftmaxLinearPolicy",
    "MixturePolicy",
    "policy_components",
    "uniform_policy",
    "random_policy",
    "epsilon_greedy",
]


class TabularPolicy:
    """Explicit action distributions ``probs[h, s, a]``."""

    def __init__(self, probs):
        probs = np.asarray(probs, dtype=float)
        if probs.ndim != 3:
            raise ValueError("probs must have shape (H, S, A)")
        if np.any(probs < -1e-12) or not np.allclose(probs.sum(axis=2), 1.0, atol=1e-9):
            raise ValueError("each per-state action distribution must be a probability vector")
        self.probs = np.clip(probs, 0.0, None)

    @property
    def horizon(self) -> int:
        return self.probs.shape[0]

    def table(self) -> np.ndarray:
        return self.probs

    def action_probabilities(self, h: int, s: int) -> np.ndarray:
        return self.probs[h, s]

    def __repr__(self):
        H, S, A = self.probs.shape
        return f"TabularPolicy(H={H}, S={S}, A={A})"


class SoftmaxLinearPolicy:
    """pi_h(a|s) proportional to exp(temperature * phi(s, a)^T w_h)."""

    def __init__(self, weights, features, temperature: float = 1.0):
        self.weights = np.asarray(weights, dtype=float)
        self.features = np.asarray(features, dtype=float)
        self.temperature = float(temperature)
        if self.weights.ndim != 2 or self.weights.shape[1] != self.features.shape[2]:
            raise ValueError("weights must have shape (H, d) matching the feature dimension")

    @property
    def horizon(self) -> int:
        return self.weights.shape[0]

    def table(self) -> np.ndarray:
        logits = self.temperature * np.einsum("sad,hd->hsa", self.features, self.weights)
        return softmax(logits, axis=2)

    def action_probabilities(self, h: int, s: int) -> np.ndarray:
        return softmax(self.temperature * self.features[s] @ self.weights[h])

    def __repr__(self):
        return f"SoftmaxLinearPolicy(H={self.horizon}, temperature={self.temperature:g})"


@dataclass
class MixturePolicy:
    """Trajectory-level mixture: draw a component once, then follow it for the whole episode.

    Evaluation is linear in the component occupancies, so values and expected
    features are weighted averages of the component ones.
    """

    components: list
    weights: np.ndarray | None = None

    def __post_init__(self):
        if not self.components:
            raise ValueError("a mixture needs at least one component")
        if self.weights is None:
            self.weights = np.full(len(self.components), 1.0 / len(self.components))
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (len(self.components),) or np.any(self.weights < 0):
            raise ValueError("mixture weights must be nonnegative, one per component")
        if not np.isclose(self.weights.sum(), 1.0, atol=1e-9):
            raise ValueError("mixture weights must sum to 1")

    @property
    def horizon(self) -> int:
        return self.components[0].horizon

    def __repr__(self):
        return f"MixturePolicy(n_components={len(self.components)})"


def policy_components(policy) -> tuple[np.ndarray, np.ndarray]:
    """Flatten any policy into ``(weights (m,), tables (m, H, S, A))``."""
    if isinstance(policy, MixturePolicy):
        weights, tables = [], []
        for w, comp in zip(policy.weights, policy.components):
            cw, ct = policy_components(comp)
            weights.append(w * cw)
            tables.append(ct)
        return np.concatenate(weights), np.concatenate(tables)
    if hasattr(policy, "table"):
        return np.ones(1), policy.table()[None]
    raise TypeError(f"unsupported policy type {type(policy).__name__}")


def uniform_policy(H: int, S: int, A: int) -> TabularPolicy:
    return TabularPolicy(np.full((H, S, A), 1.0 / A))


def random_policy(H: int, S: int, A: int, rng, concentration: float = 1.0) -> TabularPolicy:
    """Stochastic policy with Dirichlet-distributed action probabilities."""
    rng = np.random.default_rng(rng)
    return TabularPolicy(rng.dirichlet(np.full(A, concentration), size=(H, S)))


def epsilon_greedy(policy, explore: float) -> TabularPolicy:
    """Mix a Markov policy with the uniform one state by state."""
    table = policy.table()
    A = table.shape[2]
    return TabularPolicy((1.0 - explore) * table + explore / A)

"""Huber epsilon-contamination attacks on preference datasets."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import as_generator
from .preferences import PreferenceDataset

__all__ = ["AttackSpec", "corrupt", "corruption_budget", "STRATEGIES", "ATTACK_ALIASES"]

STRATEGIES = ("label-flip-max-margin", "trajectory-replace", "random-flip")
ATTACK_ALIASES = {
    "flip-margin": "label-flip-max-margin",
    "replace": "trajectory-replace",
    "flip-random": "random-flip",
}


@dataclass(frozen=True)
class AttackSpec:
    """What the adversary does.

    ``combined=True`` makes trajectory-replace also flip the label of each
    modified tuple, so a single tuple has both its trajectory and label rewritten.
    """

    epsilon: float
    strategy: str = "label-flip-max-margin"
    seed: int | None = None
    combined: bool = False

    def __post_init__(self):
        strategy = ATTACK_ALIASES.get(self.strategy, self.strategy)
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown attack strategy {self.strategy!r}; choose from {sorted(ATTACK_ALIASES)}")
        object.__setattr__(self, "strategy", strategy)
        if not 0.0 <= self.epsilon:
            raise ValueError("epsilon must be nonnegative")
        if self.epsilon >= 0.5:
            raise ValueError("epsilon must be below 0.5: estimators cannot identify the majority beyond that")


def corruption_budget(epsilon: float, N: int) -> int:
    return min(int(np.floor(epsilon * N + 1e-9)), N)


def _top_indices(scores: np.ndarray, count: int) -> np.ndarray:
    # largest scores first, ties by lower index
    order = np.lexsort((np.arange(scores.size), -scores))
    return np.sort(order[:count])


def corrupt(dataset: PreferenceDataset, spec: AttackSpec, theta_star=None) -> PreferenceDataset:
    """Return a corrupted copy of ``dataset`` with exactly ``floor(eps N)`` tuples rewritten.

    Parameters
    ----------
    dataset : PreferenceDataset
        Clean data; not modified.
    spec : AttackSpec
    theta_star : array, optional
        True reward parameters (flat or ``(H, d)``). Required by the
        margin-based and replacement strategies.
    """
    out = dataset.copy()
    count = corruption_budget(spec.epsilon, dataset.N)
    if count == 0:
        return out
    if spec.strategy == "random-flip":
        rng = as_generator(spec.seed)
        idx = np.sort(rng.choice(dataset.N, size=count, replace=False))
        out.labels[idx] *= -1
        out.corrupted[idx] = True
        return out
    if theta_star is None:
        raise ValueError(f"strategy {spec.strategy!r} needs the true reward parameters")
    theta = np.asarray(theta_star, dtype=float).reshape(-1)
    r0 = dataset.phi0() @ theta
    r1 = dataset.phi1() @ theta
    if spec.strategy == "label-flip-max-margin":
        idx = _top_indices(np.abs(r1 - r0), count)
        out.labels[idx] *= -1
        out.corrupted[idx] = True
        return out
    # trajectory-replace: swap tau1 for the dataset trajectory that most contradicts
    # the recorded label, i.e. the lowest-reward one when tau1 is marked preferred and
    # the highest-reward one otherwise; with ``combined`` the label is flipped first
    pool_states = np.concatenate([dataset.states0, dataset.states1])
    pool_actions = np.concatenate([dataset.actions0, dataset.actions1])
    pool_reward = np.concatenate([r0, r1])
    worst, best = int(np.argmin(pool_reward)), int(np.argmax(pool_reward))
    o = dataset.labels.astype(float)
    if spec.combined:
        o = -o
    new_reward = np.where(o > 0, pool_reward[worst], pool_reward[best])
    idx = _top_indices(o * (r0 - new_reward), count)
    src = np.where(o[idx] > 0, worst, best)
    out.states1[idx] = pool_states[src]
    out.actions1[idx] = pool_actions[src]
    out.labels[idx] = o[idx].astype(np.int64)
    out.corrupted[idx] = True
    return out

"""Finite-horizon linear MDPs: representation, sampling, exact planning and evaluation.

Steps are indexed ``0..H-1`` in code. Feature tables have shape ``(S, A, d)``,
measures ``(H, S, d)`` and reward parameters ``(H, d)``, so that

    P_h(s' | s, a) = phi(s, a) . mu_h(s'),    r_h(s, a) = phi(s, a) . theta_h.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from ._validation import as_generator, check_theta
from .policy import TabularPolicy, policy_components

__all__ = [
    "LinearMdp",
    "Trajectory",
    "OccupancyMeasure",
    "validate",
    "random_linear_mdp",
    "sample_trajectory",
    "sample_trajectories",
    "trajectory_feature",
    "trajectory_features",
    "optimal_value",
    "optimal_q",
    "occupancy_measure",
    "expected_feature",
    "expected_trajectory_feature",
    "policy_value",
    "policy_value_dp",
    "deterministic_policies",
]

NEGATIVE_DUST = 1e-12
SUM_TOL = 1e-9


class LinearMdp:
    """Ground-truth linear MDP.

    Parameters
    ----------
    rho : array of shape (S,)
        Initial state distribution.
    features : array of shape (S, A, d)
        Known feature map, ``features[s, a] = phi(s, a)``.
    mu : array of shape (H, S, d)
        Per-step measures; ``mu[h, s']`` is the vector ``mu_h(s')``.
    theta_star : array of shape (H, d)
        True reward parameters.
    """

    def __init__(self, rho, features, mu, theta_star):
        self.rho = np.asarray(rho, dtype=float)
        self.features = np.asarray(features, dtype=float)
        self.mu = np.asarray(mu, dtype=float)
        self.theta_star = np.asarray(theta_star, dtype=float)
        if self.features.ndim != 3:
            raise ValueError("features must have shape (S, A, d)")
        S, A, d = self.features.shape
        if self.rho.shape != (S,):
            raise ValueError(f"rho must have shape ({S},)")
        if self.mu.ndim != 3 or self.mu.shape[1:] != (S, d):
            raise ValueError(f"mu must have shape (H, {S}, {d})")
        H = self.mu.shape[0]
        if H < 1:
            raise ValueError("horizon must be at least 1")
        if self.theta_star.shape != (H, d):
            raise ValueError(f"theta_star must have shape ({H}, {d})")
        self._transitions = None

    H = property(lambda self: self.mu.shape[0])
    S = property(lambda self: self.features.shape[0])
    A = property(lambda self: self.features.shape[1])
    d = property(lambda self: self.features.shape[2])

    @property
    def transitions(self) -> np.ndarray:
        """``P[h, s, a, s']`` with negative round-off dust clipped to zero."""
        if self._transitions is None:
            P = np.einsum("sad,htd->hsat", self.features, self.mu)
            P[(P < 0) & (P >= -NEGATIVE_DUST)] = 0.0
            self._transitions = P
        return self._transitions

    def rewards(self, theta=None) -> np.ndarray:
        """Reward table ``r[h, s, a]`` for parameters ``theta`` (default: the true ones)."""
        theta = self.theta_star if theta is None else check_theta(theta, self.H, self.d)
        return np.einsum("sad,hd->hsa", self.features, theta)

    def __repr__(self):
        return f"LinearMdp(H={self.H}, S={self.S}, A={self.A}, d={self.d})"


@dataclass(frozen=True)
class Trajectory:
    """States ``s_1..s_{H+1}`` (length H+1) and actions ``a_1..a_H`` (length H)."""

    states: tuple
    actions: tuple

    def __post_init__(self):
        if len(self.states) != len(self.actions) + 1:
            raise ValueError("a trajectory holds H actions and H+1 states")

    @property
    def horizon(self) -> int:
        return len(self.actions)


@dataclass
class OccupancyMeasure:
    """``q[h, s, a]``: probability of visiting (s, a) at step h."""

    q: np.ndarray

    def state_marginals(self) -> np.ndarray:
        return self.q.sum(axis=2)


def validate(mdp: LinearMdp) -> list[str]:
    """List every violated linear-MDP invariant; empty when the instance is valid."""
    problems = []
    S, A, d, H = mdp.S, mdp.A, mdp.d, mdp.H
    norms = np.linalg.norm(mdp.features, axis=2)
    for s, a in zip(*np.nonzero(norms > 1.0 + SUM_TOL)):
        problems.append(f"(s={s}, a={a}): feature norm {norms[s, a]:.6g} exceeds 1")
    if not np.isclose(mdp.rho.sum(), 1.0, atol=SUM_TOL) or np.any(mdp.rho < 0):
        problems.append("rho: initial distribution is not a probability vector")
    P = mdp.transitions
    for h, s, a in itertools.product(range(H), range(S), range(A)):
        row = P[h, s, a]
        if np.any(row < 0):
            problems.append(f"(h={h}, s={s}, a={a}): transition not stochastic (negative entry {row.min():.3g})")
        elif abs(row.sum() - 1.0) > SUM_TOL:
            problems.append(f"(h={h}, s={s}, a={a}): transition not stochastic (sums to {row.sum():.12g})")
    bound = np.sqrt(d) + SUM_TOL
    for h in range(H):
        if np.linalg.norm(mdp.theta_star[h]) > bound:
            problems.append(f"(h={h}): reward parameter norm exceeds sqrt(d)")
        if np.linalg.norm(mdp.mu[h].sum(axis=0)) > bound:
            problems.append(f"(h={h}): measure norm ||mu_h(S)|| exceeds sqrt(d)")
    return problems


def _feature_table(S, A, d, kind, rng):
    if kind == "tabular":
        if d != S * A:
            raise ValueError("tabular features need d == S * A")
        return np.eye(S * A).reshape(S, A, d)
    if kind == "simplex":
        # rows on the probability simplex keep ||phi|| <= 1 and make phi . 1 = 1,
        # which is what lets a latent mixture define valid transitions
        return rng.dirichlet(np.full(d, 0.5), size=(S, A))
    raise ValueError(f"unknown feature kind {kind!r}")


def random_linear_mdp(
    S: int,
    A: int,
    d: int | None = None,
    H: int = 3,
    rng=None,
    *,
    kind: str = "simplex",
    identifiable: bool = False,
    concentration: float = 0.5,
    theta_norm: float | None = None,
    max_tries: int = 100,
) -> LinearMdp:
    """Random valid linear MDP.

    Transitions are built first as a latent mixture ``P_h(.|s,a) = sum_i phi_i(s,a) M_h[i]``
    of random next-state distributions, then ``mu_h`` is recovered from ``(phi, P_h)``
    by least squares and the result is re-validated. Instances that fail are redrawn.

    With ``identifiable=True`` each ``theta_h`` is made orthogonal to ``mu_h(S)``.
    Since ``phi(s,a) . mu_h(S) = 1`` for every pair, that direction only shifts all
    step-h rewards by a constant and can never be learned from preferences.
    ``theta_norm`` rescales every ``theta_h`` to that Euclidean norm (at most ``sqrt(d)``);
    larger rewards make preference labels less noisy.
    """
    rng = as_generator(rng)
    if theta_norm is not None and not 0 < theta_norm <= np.sqrt(d if d is not None else S * A) + 1e-12:
        raise ValueError("theta_norm must lie in (0, sqrt(d)]")
    if kind == "tabular":
        d = S * A if d is None else d
    if d is None:
        raise ValueError("d is required for simplex features")
    for _ in range(max_tries):
        features = _feature_table(S, A, d, kind, rng)
        Phi = features.reshape(S * A, d)
        if np.linalg.matrix_rank(Phi) < d:
            continue
        mu = np.empty((H, S, d))
        for h in range(H):
            if kind == "tabular":
                P = rng.dirichlet(np.full(S, concentration), size=S * A)
            else:
                latent = rng.dirichlet(np.full(S, concentration), size=d)
                P = Phi @ latent
            sol, *_ = np.linalg.lstsq(Phi, P, rcond=None)
            mu[h] = sol.T
        theta = rng.uniform(-1.0, 1.0, size=(H, d))
        if identifiable:
            for h in range(H):
                m = mu[h].sum(axis=0)
                theta[h] -= (theta[h] @ m) / (m @ m) * m
        if theta_norm is not None:
            theta *= theta_norm / np.maximum(np.linalg.norm(theta, axis=1, keepdims=True), 1e-300)
        rho = rng.dirichlet(np.ones(S))
        mdp = LinearMdp(rho, features, mu, theta)
        if not validate(mdp):
            return mdp
    raise RuntimeError("could not generate a valid linear MDP; try different sizes")


def _categorical(rng, probs: np.ndarray) -> np.ndarray:
    """One draw per row of ``probs`` by inverse-CDF sampling."""
    u = rng.random(probs.shape[0])
    idx = (u[:, None] >= np.cumsum(probs, axis=1)).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def sample_trajectories(mdp: LinearMdp, policy, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` independent episodes; returns ``states (n, H+1)`` and ``actions (n, H)``."""
    rng = as_generator(rng)
    weights, tables = policy_components(policy)
    H, S = mdp.H, mdp.S
    comp = rng.choice(len(weights), size=n, p=weights) if len(weights) > 1 else np.zeros(n, int)
    P = mdp.transitions
    states = np.empty((n, H + 1), dtype=np.int64)
    actions = np.empty((n, H), dtype=np.int64)
    states[:, 0] = _categorical(rng, np.broadcast_to(mdp.rho, (n, S)))
    for h in range(H):
        s = states[:, h]
        actions[:, h] = _categorical(rng, tables[comp, h, s])
        states[:, h + 1] = _categorical(rng, P[h, s, actions[:, h]])
    return states, actions


def sample_trajectory(mdp: LinearMdp, policy, rng) -> Trajectory:
    states, actions = sample_trajectories(mdp, policy, 1, rng)
    return Trajectory(tuple(int(x) for x in states[0]), tuple(int(x) for x in actions[0]))


def trajectory_features(features: np.ndarray, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Vectorised ``phi(tau)``: rows ``[phi(s_1,a_1); ...; phi(s_H,a_H)]`` of length H*d."""
    states = np.asarray(states)
    actions = np.asarray(actions)
    H = actions.shape[-1]
    feats = features[states[..., :H], actions]
    return feats.reshape(*actions.shape[:-1], H * features.shape[2])


def trajectory_feature(mdp: LinearMdp, traj: Trajectory) -> np.ndarray:
    return trajectory_features(mdp.features, np.asarray(traj.states), np.asarray(traj.actions))


def optimal_q(mdp: LinearMdp, theta) -> np.ndarray:
    """Optimal action values ``Q[h, s, a]`` by backward induction."""
    r = mdp.rewards(theta)
    P = mdp.transitions
    Q = np.empty_like(r)
    v = np.zeros(mdp.S)
    for h in reversed(range(mdp.H)):
        Q[h] = r[h] + P[h] @ v
        v = Q[h].max(axis=1)
    return Q


def optimal_value(mdp: LinearMdp, theta) -> tuple[float, TabularPolicy]:
    """Exact ``V*(theta)`` and the greedy deterministic policy (lowest action index on ties)."""
    Q = optimal_q(mdp, theta)
    greedy = Q.argmax(axis=2)
    probs = np.zeros_like(Q)
    np.put_along_axis(probs, greedy[..., None], 1.0, axis=2)
    value = float(mdp.rho @ Q[0].max(axis=1))
    return value, TabularPolicy(probs)


def _occupancies(mdp: LinearMdp, tables: np.ndarray) -> np.ndarray:
    """Forward recursion for a stack of tables ``(m, H, S, A)`` -> ``(m, H, S, A)``."""
    P = mdp.transitions
    m = tables.shape[0]
    q = np.empty_like(tables)
    state = np.broadcast_to(mdp.rho, (m, mdp.S))
    for h in range(mdp.H):
        q[:, h] = state[:, :, None] * tables[:, h]
        state = np.einsum("msa,sat->mt", q[:, h], P[h])
    return q


def occupancy_measure(mdp: LinearMdp, policy) -> OccupancyMeasure:
    weights, tables = policy_components(policy)
    return OccupancyMeasure(np.einsum("m,mhsa->hsa", weights, _occupancies(mdp, tables)))


def expected_feature(mdp: LinearMdp, policy, h: int) -> np.ndarray:
    """``Phi^T q_h``: the average feature at (0-based) step ``h``."""
    q = occupancy_measure(mdp, policy).q
    return np.einsum("sa,sad->d", q[h], mdp.features)


def expected_trajectory_feature(mdp: LinearMdp, policy) -> np.ndarray:
    """``E[phi(tau)]`` under the policy, concatenated over steps (length H*d)."""
    q = occupancy_measure(mdp, policy).q
    return np.einsum("hsa,sad->hd", q, mdp.features).reshape(-1)


def policy_value(mdp: LinearMdp, policy, theta=None) -> float:
    """``V^pi(theta) = sum_h q_h . r_h`` from the exact occupancy measure."""
    q = occupancy_measure(mdp, policy).q
    return float(np.sum(q * mdp.rewards(theta)))


def policy_value_dp(mdp: LinearMdp, policy, theta=None) -> float:
    """Policy evaluation by backward dynamic programming (mixtures averaged per component)."""
    weights, tables = policy_components(policy)
    r = mdp.rewards(theta)
    P = mdp.transitions
    total = 0.0
    for w, table in zip(weights, tables):
        v = np.zeros(mdp.S)
        for h in reversed(range(mdp.H)):
            v = np.sum(table[h] * (r[h] + P[h] @ v), axis=1)
        total += w * float(mdp.rho @ v)
    return total


def deterministic_policies(H: int, S: int, A: int):
    """Every deterministic Markov policy, as TabularPolicy objects (A**(H*S) of them)."""
    eye = np.eye(A)
    for choice in itertools.product(range(A), repeat=H * S):
        yield TabularPolicy(eye[np.asarray(choice)].reshape(H, S, A))

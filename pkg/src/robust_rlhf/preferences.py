"""Bradley-Terry preference datasets and coverage diagnostics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from ._validation import as_generator
from .mdp import LinearMdp, Trajectory, expected_trajectory_feature, optimal_value, sample_trajectories, trajectory_features
from .policy import policy_components

__all__ = [
    "link_sigmoid",
    "PreferencePair",
    "PreferenceDataset",
    "sample_dataset",
    "enumerate_trajectories",
    "CoverageDiagnostics",
    "coverage_diagnostics",
]


def link_sigmoid(x):
    """sigma(x) = 1 / (1 + exp(-x)), evaluated without overflow."""
    return expit(x)


@dataclass(frozen=True)
class PreferencePair:
    tau0: Trajectory
    tau1: Trajectory
    o: int
    corrupted: bool = False

    def __post_init__(self):
        if self.o not in (1, -1):
            raise ValueError("label must be +1 or -1")
        if self.tau0.horizon != self.tau1.horizon:
            raise ValueError("both trajectories must have the same horizon")


class PreferenceDataset:
    """N comparisons stored column-wise.

    ``labels[n] = +1`` means ``tau1`` was preferred. The ``corrupted`` flags are
    bookkeeping for experiments; estimators never read them.
    """

    def __init__(self, features, states0, actions0, states1, actions1, labels, corrupted=None):
        self.features = np.asarray(features, dtype=float)
        self.states0 = np.asarray(states0, dtype=np.int64)
        self.actions0 = np.asarray(actions0, dtype=np.int64)
        self.states1 = np.asarray(states1, dtype=np.int64)
        self.actions1 = np.asarray(actions1, dtype=np.int64)
        self.labels = np.asarray(labels, dtype=np.int64)
        N = self.labels.shape[0]
        self.corrupted = np.zeros(N, bool) if corrupted is None else np.asarray(corrupted, bool)
        H = self.actions0.shape[1] if self.actions0.ndim == 2 else -1
        for name, arr, width in (
            ("states0", self.states0, H + 1),
            ("actions0", self.actions0, H),
            ("states1", self.states1, H + 1),
            ("actions1", self.actions1, H),
        ):
            if arr.shape != (N, width):
                raise ValueError(f"{name} must have shape ({N}, {width})")
        if N < 2:
            raise ValueError("a preference dataset needs at least 2 pairs")
        if not np.all(np.isin(self.labels, (-1, 1))):
            raise ValueError("labels must be +1 or -1")
        if self.corrupted.shape != (N,):
            raise ValueError("one corruption flag per pair is required")
        S, A, _ = self.features.shape
        if (
            min(self.states0.min(), self.states1.min()) < 0
            or max(self.states0.max(), self.states1.max()) >= S
            or min(self.actions0.min(), self.actions1.min()) < 0
            or max(self.actions0.max(), self.actions1.max()) >= A
        ):
            raise ValueError("trajectory indices fall outside the feature table")

    @property
    def N(self) -> int:
        return self.labels.shape[0]

    @property
    def H(self) -> int:
        return self.actions0.shape[1]

    @property
    def d(self) -> int:
        return self.features.shape[2]

    def __len__(self):
        return self.N

    def __getitem__(self, n) -> PreferencePair:
        return PreferencePair(
            Trajectory(tuple(map(int, self.states0[n])), tuple(map(int, self.actions0[n]))),
            Trajectory(tuple(map(int, self.states1[n])), tuple(map(int, self.actions1[n]))),
            int(self.labels[n]),
            bool(self.corrupted[n]),
        )

    @property
    def pairs(self) -> list[PreferencePair]:
        return [self[n] for n in range(self.N)]

    def phi0(self) -> np.ndarray:
        return trajectory_features(self.features, self.states0, self.actions0)

    def phi1(self) -> np.ndarray:
        return trajectory_features(self.features, self.states1, self.actions1)

    def differences(self) -> np.ndarray:
        """Rows ``x_n = phi(tau1) - phi(tau0)``."""
        return self.phi1() - self.phi0()

    def subset(self, idx) -> "PreferenceDataset":
        idx = np.asarray(idx)
        return PreferenceDataset(
            self.features,
            self.states0[idx],
            self.actions0[idx],
            self.states1[idx],
            self.actions1[idx],
            self.labels[idx],
            self.corrupted[idx],
        )

    def copy(self) -> "PreferenceDataset":
        return self.subset(np.arange(self.N))

    def transitions(self) -> dict:
        """Per-step transition tuples from both trajectories of every pair.

        Returns a dict with arrays ``s, a, s_next`` of shape (H, 2N).
        """
        states = np.concatenate([self.states0, self.states1])
        actions = np.concatenate([self.actions0, self.actions1])
        return {"s": states[:, :-1].T.copy(), "a": actions.T.copy(), "s_next": states[:, 1:].T.copy()}

    def __repr__(self):
        return f"PreferenceDataset(N={self.N}, H={self.H}, d={self.d}, corrupted={int(self.corrupted.sum())})"


def sample_dataset(mdp: LinearMdp, mu0, mu1, N: int, rng, link=link_sigmoid) -> PreferenceDataset:
    """Draw N i.i.d. comparisons ``tau0 ~ mu0``, ``tau1 ~ mu1`` labelled by the link model.

    ``P(o = +1) = link(r*(tau1) - r*(tau0))`` with ``r*`` the true trajectory reward.
    """
    if N < 2:
        raise ValueError("N must be at least 2")
    rng = as_generator(rng)
    s0, a0 = sample_trajectories(mdp, mu0, N, rng)
    s1, a1 = sample_trajectories(mdp, mu1, N, rng)
    theta = mdp.theta_star.reshape(-1)
    gap = trajectory_features(mdp.features, s1, a1) @ theta - trajectory_features(mdp.features, s0, a0) @ theta
    labels = np.where(rng.random(N) < link(gap), 1, -1)
    return PreferenceDataset(mdp.features, s0, a0, s1, a1, labels)


def enumerate_trajectories(mdp: LinearMdp, policy) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact law of ``(s_1, a_1, ..., s_H, a_H)`` under a policy.

    Returns ``states (n, H)``, ``actions (n, H)`` and ``probs (n,)`` for every
    state-action sequence of positive probability; the terminal state is marginalised.
    """
    weights, tables = policy_components(policy)
    P = mdp.transitions
    S, A = mdp.S, mdp.A
    states = np.arange(S)[:, None]
    actions = np.zeros((S, 0), dtype=np.int64)
    prob = weights[:, None] * mdp.rho[None, :]
    for h in range(mdp.H):
        keep = prob.sum(axis=0) > 0
        states, actions, prob = states[keep], actions[keep], prob[:, keep]
        n = states.shape[0]
        st = states[:, -1]
        prob = (prob[:, :, None] * tables[:, h, st, :]).reshape(len(weights), n * A)
        states = np.repeat(states, A, axis=0)
        actions = np.concatenate([np.repeat(actions, A, axis=0), np.tile(np.arange(A), n)[:, None]], axis=1)
        if h < mdp.H - 1:
            keep = prob.sum(axis=0) > 0
            states, actions, prob = states[keep], actions[keep], prob[:, keep]
            n = states.shape[0]
            nxt = P[h, states[:, -1], actions[:, -1]]
            prob = (prob[:, :, None] * nxt[None]).reshape(len(weights), n * S)
            states = np.concatenate([np.repeat(states, S, axis=0), np.tile(np.arange(S), n)[:, None]], axis=1)
            actions = np.repeat(actions, S, axis=0)
    total = prob.sum(axis=0)
    keep = total > 0
    return states[keep], actions[keep], total[keep]


@dataclass
class CoverageDiagnostics:
    """Coverage constants of a behaviour pair.

    ``xi_rowspace`` is the smallest nonzero eigenvalue of ``sigma_diff`` over L; it
    is reported next to ``xi`` because ``phi(s,a) . mu_h(S) = 1`` for every linear
    MDP, which forces ``sigma_diff`` to be singular and ``xi`` to be 0.
    """

    sigma_diff: np.ndarray
    sigma_avg: np.ndarray
    xi: float
    alpha: float
    nu: float
    kappa: float
    xi_rowspace: float = 0.0
    r_max: float = 0.0
    exact: bool = True
    standard_error: float = 0.0
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "xi": self.xi,
            "xi_rowspace": self.xi_rowspace,
            "alpha": self.alpha,
            "nu": self.nu,
            "kappa": self.kappa,
            "r_max": self.r_max,
            "exact": self.exact,
            "standard_error": self.standard_error,
            "sigma_diff": self.sigma_diff.tolist(),
            "sigma_avg": self.sigma_avg.tolist(),
        }


def _moments_exact(mdp, policy):
    states, actions, probs = enumerate_trajectories(mdp, policy)
    feats = trajectory_features(mdp.features, states, actions)
    mean = probs @ feats
    second = feats.T @ (probs[:, None] * feats)
    return mean, second, feats


def _pair_matrices(m0, M0, m1, M1):
    cross = np.outer(m0, m1)
    diff = M0 + M1 - cross - cross.T
    avg = M0 + M1 + cross + cross.T
    return (diff + diff.T) / 2, (avg + avg.T) / 2


def _relative_condition(target: np.ndarray, behaviour: np.ndarray, tol: float = 1e-10) -> float:
    """Largest generalised eigenvalue of (target, behaviour) on the behaviour row space."""
    vals, vecs = np.linalg.eigh(behaviour)
    scale = max(np.abs(vals).max(), np.abs(target).max(), 1e-300)
    keep = vals > tol * scale
    U = vecs[:, keep]
    outside = target - U @ (U.T @ target @ U) @ U.T
    if np.linalg.norm(outside, 2) > 1e-8 * scale:
        return float("inf")
    if not keep.any():
        return 0.0
    W = U / np.sqrt(vals[keep])
    return float(max(np.linalg.eigvalsh(W.T @ target @ W).max(), 0.0))


def coverage_diagnostics(
    mdp: LinearMdp,
    mu0,
    mu1,
    target_pi=None,
    mu_ref=None,
    *,
    cap: int = 10**6,
    n_monte_carlo: int = 20000,
    rng=None,
) -> CoverageDiagnostics:
    """Coverage constants of the behaviour pair ``(mu0, mu1)``.

    Parameters
    ----------
    target_pi : policy, optional
        Comparator for alpha and nu; defaults to the optimal policy for ``theta_star``.
        The alpha pair is ``(target_pi, mu1)``.
    mu_ref : policy, optional
        Reference policy; only recorded (its mean feature lands in ``extra``).
    cap : int
        Exact enumeration is used while ``S**H * A**H <= cap``; Monte Carlo otherwise.
    """
    H = mdp.H
    L = np.sqrt(H)
    if target_pi is None:
        target_pi = optimal_value(mdp, mdp.theta_star)[1]
    exact = mdp.S**H * mdp.A**H <= cap
    se = 0.0
    theta = mdp.theta_star.reshape(-1)
    if exact:
        m0, M0, f0 = _moments_exact(mdp, mu0)
        m1, M1, f1 = _moments_exact(mdp, mu1)
        mt, Mt, _ = _moments_exact(mdp, target_pi)
        sigma_diff, sigma_avg = _pair_matrices(m0, M0, m1, M1)
        target_diff, _ = _pair_matrices(mt, Mt, m1, M1)
        r0, r1 = f0 @ theta, f1 @ theta
    else:
        rng = as_generator(rng)
        n = n_monte_carlo
        f0 = trajectory_features(mdp.features, *sample_trajectories(mdp, mu0, n, rng))
        f1 = trajectory_features(mdp.features, *sample_trajectories(mdp, mu1, n, rng))
        ft = trajectory_features(mdp.features, *sample_trajectories(mdp, target_pi, n, rng))
        dif, sm, dt = f0 - f1, f0 + f1, ft - f1
        outer_d = np.einsum("ni,nj->nij", dif, dif)
        outer_s = np.einsum("ni,nj->nij", sm, sm)
        sigma_diff, sigma_avg = outer_d.mean(0), outer_s.mean(0)
        target_diff = dt.T @ dt / n
        se = float(max(outer_d.std(0, ddof=1).max(), outer_s.std(0, ddof=1).max()) / np.sqrt(n))
        mt = ft.mean(0)
        r0, r1 = f0 @ theta, f1 @ theta
    eig = np.linalg.eigvalsh(sigma_diff)
    scale = max(eig.max(), 1e-300)
    nonzero = eig[eig > 1e-10 * scale]
    xi = eig.min() / L if nonzero.size == eig.size else 0.0
    xi_rowspace = float(nonzero.min() / L) if nonzero.size else 0.0
    alpha = _relative_condition(target_diff, sigma_diff)
    pinv = np.linalg.pinv(sigma_avg, rcond=1e-10, hermitian=True)
    nu = float(max(mt @ pinv @ pinv @ mt, 0.0))
    r_max = float(max(r1.max() - r0.min(), r0.max() - r1.min()))
    p_edge = link_sigmoid(-r_max)
    kappa = float(1.0 / (p_edge * (1.0 - p_edge)))
    extra = {}
    if mu_ref is not None:
        extra["reference_feature"] = expected_trajectory_feature(mdp, mu_ref).tolist()
    return CoverageDiagnostics(
        sigma_diff=sigma_diff,
        sigma_avg=sigma_avg,
        xi=float(xi),
        alpha=alpha,
        nu=nu,
        kappa=kappa,
        xi_rowspace=xi_rowspace,
        r_max=r_max,
        exact=exact,
        standard_error=se,
        extra=extra,
    )

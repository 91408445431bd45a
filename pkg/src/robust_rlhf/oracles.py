"""Offline RL oracles: exact planning, robust least-squares value iteration and a
robust primal-dual solver that also returns an approximate subgradient of V*(theta).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import softmax

from ._validation import as_generator, check_epsilon, check_theta, project_ball
from .mdp import LinearMdp, expected_trajectory_feature, optimal_value
from .policy import MixturePolicy, TabularPolicy
from .robust_stats import RobustMeanConfig, robust_covariance, robust_mean

__all__ = [
    "OracleResult",
    "TransitionData",
    "corrupt_transitions",
    "exact_oracle",
    "robust_lsvi_oracle",
    "PrimalDualConfig",
    "primal_dual_oracle",
    "mirror_descent_update",
    "projected_step",
]

logger = logging.getLogger(__name__)


@dataclass
class OracleResult:
    """What an oracle call returns; ``subgradient`` is ``None`` for zero-order oracles."""

    policy: object
    value_estimate: float
    subgradient: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)


@dataclass
class TransitionData:
    """Offline per-step transition tuples ``(h, s, a, s')``.

    Rewards are not stored: they are relabelled from whatever reward parameters
    the caller passes, ``r = phi(s, a) . theta_h``, plus an optional per-tuple
    ``reward_offset`` that models corrupted reward observations.

    Attributes
    ----------
    features : array (S, A, d)
    rho : array (S,)
        Initial-state distribution (known to the learner).
    s, a, s_next : int arrays (H, n)
    reward_offset : float array (H, n) or None
    """

    features: np.ndarray
    rho: np.ndarray
    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    reward_offset: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.rho = np.asarray(self.rho, dtype=float)
        self.s = np.asarray(self.s, dtype=np.int64)
        self.a = np.asarray(self.a, dtype=np.int64)
        self.s_next = np.asarray(self.s_next, dtype=np.int64)
        if self.s.ndim != 2 or self.s.shape != self.a.shape or self.s.shape != self.s_next.shape:
            raise ValueError("s, a and s_next must share one (H, n) shape")
        if self.s.shape[1] == 0:
            raise ValueError("transition data must be nonempty at every step")
        if self.reward_offset is not None:
            self.reward_offset = np.asarray(self.reward_offset, dtype=float)
            if self.reward_offset.shape != self.s.shape:
                raise ValueError("reward_offset must match the (H, n) tuple layout")

    @classmethod
    def from_preferences(cls, dataset, rho) -> "TransitionData":
        """Every trajectory of every pair contributes one tuple per step."""
        t = dataset.transitions()
        return cls(dataset.features, rho, t["s"], t["a"], t["s_next"])

    @classmethod
    def from_mdp_rollouts(cls, mdp: LinearMdp, policy, n: int, rng) -> "TransitionData":
        from .mdp import sample_trajectories

        states, actions = sample_trajectories(mdp, policy, n, rng)
        return cls(mdp.features, mdp.rho, states[:, :-1].T, actions.T, states[:, 1:].T)

    H = property(lambda self: self.s.shape[0])
    n = property(lambda self: self.s.shape[1])
    d = property(lambda self: self.features.shape[2])

    def phi(self) -> np.ndarray:
        """Features of every tuple, shape (H, n, d)."""
        return self.features[self.s, self.a]

    def rewards(self, theta) -> np.ndarray:
        theta = check_theta(theta, self.H, self.d)
        r = np.einsum("hnd,hd->hn", self.phi(), theta)
        if self.reward_offset is not None:
            r = r + self.reward_offset
        return r

    def subset(self, idx) -> "TransitionData":
        """Keep the tuples of the trajectories ``idx`` at every step."""
        idx = np.asarray(idx)
        off = None if self.reward_offset is None else self.reward_offset[:, idx]
        return TransitionData(self.features, self.rho, self.s[:, idx], self.a[:, idx], self.s_next[:, idx], off)


def corrupt_transitions(data: TransitionData, epsilon: float, rng, magnitude: float = 2.0, theta=None) -> TransitionData:
    """Offset the rewards of a ``floor(epsilon n)`` subset of tuples at every step.

    Corrupted tuples get ``+magnitude`` when their action is below-average under
    ``theta`` for that step (and ``-magnitude`` otherwise), which pushes a
    learner towards bad actions. Without ``theta`` the sign is random.
    """
    epsilon = check_epsilon(epsilon)
    rng = as_generator(rng)
    H, n = data.s.shape
    count = int(np.floor(epsilon * n + 1e-9))
    offset = np.zeros((H, n)) if data.reward_offset is None else data.reward_offset.copy()
    if count == 0:
        return replace(data, reward_offset=offset)
    for h in range(H):
        idx = rng.choice(n, size=count, replace=False)
        if theta is None:
            sign = rng.choice([-1.0, 1.0], size=count)
        else:
            th = check_theta(theta, H, data.d)[h]
            r = data.features[data.s[h, idx]] @ th  # (count, A)
            mine = r[np.arange(count), data.a[h, idx]]
            sign = np.where(mine <= r.mean(axis=1), 1.0, -1.0)
        offset[h, idx] += magnitude * sign
    return replace(data, reward_offset=offset)


def exact_oracle(mdp: LinearMdp, theta) -> OracleResult:
    """Backward-induction optimum with the greedy policy's expected feature as subgradient."""
    theta = check_theta(theta, mdp.H, mdp.d)
    value, policy = optimal_value(mdp, theta)
    grad = expected_trajectory_feature(mdp, policy)
    return OracleResult(policy, value, grad, {"kind": "exact"})


def _trimmed_least_squares(X, y, epsilon, ridge, rounds):
    n, d = X.shape
    drop = int(np.ceil(epsilon * n - 1e-9)) if epsilon > 0 else 0
    keep = np.arange(n)
    for _ in range(rounds if drop else 1):
        Xk, yk = X[keep], y[keep]
        gram = Xk.T @ Xk + ridge * np.eye(d)
        w = np.linalg.solve(gram, Xk.T @ yk)
        if not drop:
            break
        resid = np.abs(y - X @ w)
        order = np.lexsort((np.arange(n), resid))
        keep = np.sort(order[: n - drop])
    Xk = X[keep]
    gram = Xk.T @ Xk + ridge * np.eye(d)
    w = np.linalg.solve(gram, Xk.T @ y[keep])
    return w, gram, keep


def robust_lsvi_oracle(
    data: TransitionData,
    theta,
    epsilon: float = 0.0,
    *,
    penalty: float = 0.1,
    ridge: float = 1e-8,
    trim_rounds: int = 3,
) -> OracleResult:
    """Pessimistic least-squares value iteration with trimmed regressions.

    At each step (backwards) the targets ``r + V_{h+1}(s')`` are regressed on
    ``phi(s, a)``; the ``ceil(epsilon n)`` largest absolute residuals are dropped and
    the fit is repeated ``trim_rounds`` times. The action values are
    ``phi . w - penalty * ||phi||_{Gram^-1}``. The greedy policy is taken on these
    values; values passed backwards are clipped to ``+-(H - h) * max|r|``.

    Raises
    ------
    ValueError
        ``insufficient coverage at step h`` when fewer than ``d`` samples survive trimming.
    """
    epsilon = check_epsilon(epsilon)
    H, d = data.H, data.d
    theta = check_theta(theta, H, d)
    feats = data.features
    S, A, _ = feats.shape
    rewards = data.rewards(theta)
    phi = data.phi()
    r_max = max(float(np.max(np.abs(np.einsum("sad,hd->hsa", feats, theta)))), 1e-12)
    v_next = np.zeros(S)
    Q = np.empty((H, S, A))
    kept_counts = []
    for h in reversed(range(H)):
        y = rewards[h] + v_next[data.s_next[h]]
        w, gram, keep = _trimmed_least_squares(phi[h], y, epsilon, ridge, trim_rounds)
        if keep.size < d:
            raise ValueError(f"insufficient coverage at step {h}")
        kept_counts.append(int(keep.size))
        inv = np.linalg.inv(gram)
        bonus = np.sqrt(np.maximum(np.einsum("sad,de,sae->sa", feats, inv, feats), 0.0))
        Q[h] = feats @ w - penalty * bonus
        bound = (H - h) * r_max
        v_next = np.clip(Q[h], -bound, bound).max(axis=1)
    greedy = Q.argmax(axis=2)
    probs = np.zeros((H, S, A))
    np.put_along_axis(probs, greedy[..., None], 1.0, axis=2)
    value = float(data.rho @ np.clip(Q[0], -H * r_max, H * r_max).max(axis=1))
    return OracleResult(TabularPolicy(probs), value, None, {"kind": "rlsvi", "kept": kept_counts[::-1]})


# -- primal-dual -----------------------------------------------------------------


def mirror_descent_update(log_weights, payoff, alpha):
    """One exponentiated-gradient step per state.

    ``log_weights`` and ``payoff`` have shape (S, A); the new policy is
    ``pi(a|s) proportional to pi_old(a|s) exp(alpha payoff(s, a))``. Returns the new
    unnormalised log-weights and the normalised policy.
    """
    logits = np.asarray(log_weights, dtype=float) + alpha * np.asarray(payoff, dtype=float)
    return logits, softmax(logits, axis=-1)


def projected_step(y, direction, eta, radius):
    """``Proj_ball(y + eta * direction)``; descent callers pass a negated gradient."""
    return project_ball(np.asarray(y, dtype=float) + eta * np.asarray(direction, dtype=float), radius)


@dataclass
class PrimalDualConfig:
    """Settings for :func:`primal_dual_oracle`.

    Parameters left as ``None`` get data-driven defaults: ``T = ceil(sqrt(N_m))``
    and ``K = floor(N_m / (2 H T))`` with ``N_m`` the number of tuples used for
    gradients; ``B_radius`` is the largest ``||Lambda_h^-1 phi(s, a)||`` over steps and
    feature vectors, with ``Lambda_h`` the empirical feature covariance; ``W_radius = 2 H sqrt(d)``; and

        eta_w = H / (B sqrt(d T)),
        eta_b = B / (d^1.5 sqrt(2 (H^2 + 1) T)),
        alpha_mirror = sqrt(2 ln A / (d T)) / H.
    """

    T: int | None = None
    K: int | None = None
    eta_w: float | None = None
    eta_b: float | None = None
    alpha_mirror: float | None = None
    B_radius: float | None = None
    W_radius: float | None = None
    epsilon: float = 0.0
    covariance_fraction: float = 0.5
    robust_method: str = "spectral-filter"
    sigma_bound: float | None = None
    alternating: bool = False

    def __post_init__(self):
        check_epsilon(self.epsilon)
        for name in ("T", "K"):
            v = getattr(self, name)
            if v is not None and (int(v) != v or v < 0):
                raise ValueError(f"{name} must be a nonnegative integer")
        for name in ("eta_w", "eta_b", "alpha_mirror", "B_radius", "W_radius"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.covariance_fraction < 1.0:
            raise ValueError("covariance_fraction must lie in (0, 1)")

    def resolved(self, H: int, d: int, A: int, n_gradient: int, inv_norm: float) -> "PrimalDualConfig":
        T = self.T if self.T is not None else int(np.ceil(np.sqrt(H * n_gradient)))
        T = max(int(T), 1)
        K = self.K if self.K is not None else int(H * n_gradient // (2 * H * T))
        B = self.B_radius if self.B_radius is not None else float(inv_norm)
        W = self.W_radius if self.W_radius is not None else 2.0 * H * np.sqrt(d)
        eta_w = self.eta_w if self.eta_w is not None else H / (B * np.sqrt(d * T))
        eta_b = self.eta_b if self.eta_b is not None else B / (d**1.5 * np.sqrt(2 * (H**2 + 1) * T))
        alpha = self.alpha_mirror if self.alpha_mirror is not None else np.sqrt(2 * np.log(max(A, 2)) / (d * T)) / H
        return replace(self, T=T, K=int(K), B_radius=B, W_radius=W, eta_w=eta_w, eta_b=eta_b, alpha_mirror=alpha)


class _BatchStream:
    """Consecutive disjoint batches from a per-step permutation, reshuffled when exhausted."""

    def __init__(self, n, rng):
        self.n = n
        self.rng = rng
        self.order = rng.permutation(n)
        self.pos = 0
        self.epochs = 1

    def take(self, k):
        if self.pos + k > self.n:
            self.order = self.rng.permutation(self.n)
            self.pos = 0
            self.epochs += 1
        out = self.order[self.pos : self.pos + k]
        self.pos += k
        return out


def primal_dual_oracle(data: TransitionData, theta, config: PrimalDualConfig | None = None, rng=None) -> OracleResult:
    """Corruption-robust offline primal-dual solver (first-order oracle).

    Runs stochastic gradient descent-ascent on the reparametrised Lagrangian of
    the linear-MDP linear program, with ``w`` (action-value parameters) descending
    and ``beta`` (covariance-weighted occupancy parameters) ascending. Every
    stochastic gradient is a robust mean over a batch of ``K`` tuples, and the
    policy follows exponentiated-gradient (mirror descent) updates driven by
    ``Phi w_h``. The returned policy is the uniform mixture of the ``T`` per-iteration
    softmax policies and the subgradient is ``robust_cov(step-h features) @ mean(beta_h)``.

    Parameters
    ----------
    data : TransitionData
        Offline tuples. Trajectories are split once into a gradient part and a
        covariance part (``config.covariance_fraction``).
    theta : array (H, d) or (H*d,)
        Reward parameters used to relabel rewards.
    config : PrimalDualConfig, optional
    rng : seed or Generator

    Returns
    -------
    OracleResult
    """
    config = PrimalDualConfig() if config is None else config
    rng = as_generator(rng)
    H, d = data.H, data.d
    theta = check_theta(theta, H, d)
    feats = data.features
    S, A, _ = feats.shape
    eps = config.epsilon

    perm = rng.permutation(data.n)
    n_cov = int(round(config.covariance_fraction * data.n))
    n_cov = min(max(n_cov, 1), data.n - 1)
    cov_part, grad_part = data.subset(np.sort(perm[:n_cov])), data.subset(np.sort(perm[n_cov:]))
    rob = RobustMeanConfig(epsilon=eps, method=config.robust_method, sigma_bound=config.sigma_bound)

    needed = int(np.ceil(H * d**2 / max(eps, 1e-12) ** 2 * max(np.log(d), 1.0) ** 2)) if eps > 0 else 0
    if eps > 0 and H * cov_part.n < needed:
        logger.warning("covariance split has %d tuples; robust covariance guarantees want about %d", H * cov_part.n, needed)

    phi_g = grad_part.phi()  # (H, n, d)
    r_g = grad_part.rewards(theta)
    lam_hat = np.stack([robust_covariance(phi_g[h], rob) for h in range(H)])
    # beta*_h = Lambda_h^-1 lambda_h with lambda_h in the convex hull of the features,
    # so the largest ||Lambda_h^-1 phi(s, a)|| bounds every comparator
    flat = feats.reshape(-1, d)
    inv_norm = max(
        float(np.max(np.linalg.norm(flat @ np.linalg.pinv(lam_hat[h], rcond=1e-8, hermitian=True), axis=1)))
        for h in range(H)
    )
    cfg = config.resolved(H, d, A, grad_part.n, inv_norm)
    T, K = cfg.T, cfg.K
    if K < d:
        raise ValueError("gradient batch too small: K must be at least the feature dimension")
    if 3 * T * K > grad_part.n:
        logger.info("gradient batches reuse tuples: %d needed per step, %d available", 3 * T * K, grad_part.n)

    w = np.zeros((H, d))
    beta = np.zeros((H, d))
    logits = np.zeros((H, S, A))
    w_sum = np.zeros((H, d))
    beta_sum = np.zeros((H, d))
    tables = np.empty((T, H, S, A))
    streams = [_BatchStream(grad_part.n, rng) for _ in range(H)]
    init_feature = np.einsum("s,sa,sad->d", data.rho, np.full((S, A), 1.0 / A), feats)
    grad_norms = np.zeros((T, 2))
    for t in range(T):
        pi = softmax(logits, axis=2)  # (H, S, A)
        tables[t] = pi
        # E_h(s) = sum_b pi_h(b|s) phi(s, b): the policy-averaged feature at each state
        avg_feat = np.einsum("hsa,sad->hsd", pi, feats)
        g_w = np.empty((H, d))
        for h in range(H):
            j2 = streams[h].take(K)
            phi2 = phi_g[h, j2]
            lam_term = phi2 * (phi2 @ beta[h])[:, None]
            if h == 0:
                init_feature = np.einsum("s,sd->d", data.rho, avg_feat[0])
                q_term = np.broadcast_to(init_feature, (K, d))
            else:
                j1 = streams[h - 1].take(K)
                weight = phi_g[h - 1, j1] @ beta[h - 1]
                q_term = avg_feat[h, grad_part.s_next[h - 1, j1]] * weight[:, None]
            g_w[h] = robust_mean(q_term - lam_term, rob)
        w_old = w.copy()
        for h in range(H):
            w[h] = projected_step(w[h], -g_w[h], cfg.eta_w, cfg.W_radius)
        # values v_h(s) = sum_a pi_h(a|s) phi(s,a) . w_h; simultaneous updates use
        # the pre-update w, alternating ones the fresh one
        w_dual = w if cfg.alternating else w_old
        v = np.einsum("hsd,hd->hs", avg_feat, w_dual)
        g_b = np.empty((H, d))
        for h in range(H):
            j3 = streams[h].take(K)
            phi3 = phi_g[h, j3]
            target = r_g[h, j3] - phi3 @ w_dual[h]
            if h < H - 1:
                target = target + v[h + 1, grad_part.s_next[h, j3]]
            g_b[h] = robust_mean(phi3 * target[:, None], rob)
        for h in range(H):
            logits[h], _ = mirror_descent_update(logits[h], feats @ w_dual[h], cfg.alpha_mirror)
            beta[h] = projected_step(beta[h], g_b[h], cfg.eta_b, cfg.B_radius)
        w_sum += w
        beta_sum += beta
        grad_norms[t] = np.linalg.norm(g_w), np.linalg.norm(g_b)
    w_bar = w_sum / T
    beta_bar = beta_sum / T
    phi_c = cov_part.phi()
    v_hat = np.stack([robust_covariance(phi_c[h], rob) @ beta_bar[h] for h in range(H)])
    policy = MixturePolicy([TabularPolicy(tab) for tab in tables])
    value = float(np.sum(v_hat * theta))
    diagnostics = {
        "kind": "primal-dual",
        "T": T,
        "K": K,
        "eta_w": cfg.eta_w,
        "eta_b": cfg.eta_b,
        "alpha_mirror": cfg.alpha_mirror,
        "B_radius": cfg.B_radius,
        "W_radius": cfg.W_radius,
        "w_bar": w_bar,
        "beta_bar": beta_bar,
        "grad_norms": grad_norms,
        "epochs": [s.epochs for s in streams],
    }
    return OracleResult(policy, value, v_hat.reshape(-1), diagnostics)

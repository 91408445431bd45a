import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robust_rlhf.mdp import (
    LinearMdp,
    Trajectory,
    deterministic_policies,
    expected_feature,
    expected_trajectory_feature,
    occupancy_measure,
    optimal_q,
    optimal_value,
    policy_value,
    policy_value_dp,
    random_linear_mdp,
    sample_trajectories,
    sample_trajectory,
    trajectory_feature,
    trajectory_features,
    validate,
)
from robust_rlhf.policy import (
    MixturePolicy,
    SoftmaxLinearPolicy,
    TabularPolicy,
    epsilon_greedy,
    random_policy,
    uniform_policy,
)


def test_validate_identity_single_state():
    mdp = LinearMdp([1.0], np.ones((1, 1, 1)), np.ones((2, 1, 1)), np.zeros((2, 1)))
    assert validate(mdp) == []


def test_validate_flags_non_stochastic_transition():
    features = np.array([[[1.0, 0.0, 0.0]]])
    mu = np.array([[[1.5, 0.0, 0.0]]])
    mdp = LinearMdp([1.0], features, mu, np.zeros((1, 3)))
    problems = validate(mdp)
    assert len(problems) == 1
    assert "transition not stochastic" in problems[0]
    assert "h=0, s=0, a=0" in problems[0]


def test_validate_flags_feature_norm_and_rho():
    mdp = LinearMdp([0.5], np.full((1, 1, 1), 2.0), np.full((1, 1, 1), 0.5), np.zeros((1, 1)))
    text = " ".join(validate(mdp))
    assert "feature norm" in text and "rho" in text


@pytest.mark.parametrize("kind", ["simplex", "tabular"])
def test_generator_outputs_are_valid(kind):
    for seed in range(5):
        d = 4 if kind == "simplex" else None
        mdp = random_linear_mdp(5, 2, d, H=3, rng=seed, kind=kind)
        assert validate(mdp) == []
        P = mdp.transitions
        assert np.allclose(P.sum(axis=3), 1.0, atol=1e-9)
        assert P.min() >= 0.0


def test_generator_identifiable_and_theta_norm():
    mdp = random_linear_mdp(4, 3, 4, H=2, rng=3, identifiable=True, theta_norm=1.5)
    for h in range(mdp.H):
        assert abs(mdp.theta_star[h] @ mdp.mu[h].sum(axis=0)) < 1e-10
        assert np.linalg.norm(mdp.theta_star[h]) == pytest.approx(1.5)
    with pytest.raises(ValueError):
        random_linear_mdp(4, 3, 4, H=2, rng=3, theta_norm=3.0)


def test_linear_mdp_shape_checks():
    with pytest.raises(ValueError):
        LinearMdp([1.0], np.ones((1, 1)), np.ones((1, 1, 1)), np.zeros((1, 1)))
    with pytest.raises(ValueError):
        LinearMdp([0.5, 0.5], np.ones((1, 1, 1)), np.ones((1, 1, 1)), np.zeros((1, 1)))


def test_sample_deterministic_chain(chain_mdp):
    traj = sample_trajectory(chain_mdp, uniform_policy(2, 3, 1), 0)
    assert traj.states == (0, 1, 2)
    assert traj.actions == (0, 0)


def test_sampling_is_deterministic_per_seed(small_mdp, uniform_small):
    a = sample_trajectories(small_mdp, uniform_small, 50, np.random.default_rng(7))
    b = sample_trajectories(small_mdp, uniform_small, 50, np.random.default_rng(7))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_empirical_state_frequencies_match_occupancy(small_mdp):
    pi = random_policy(small_mdp.H, small_mdp.S, small_mdp.A, 4)
    n = 100_000
    states, actions = sample_trajectories(small_mdp, pi, n, np.random.default_rng(11))
    q = occupancy_measure(small_mdp, pi).q
    for h in range(small_mdp.H):
        counts = np.zeros((small_mdp.S, small_mdp.A))
        np.add.at(counts, (states[:, h], actions[:, h]), 1.0)
        freq = counts / n
        band = 3 * np.sqrt(q[h] * (1 - q[h]) / n) + 1e-12
        assert np.all(np.abs(freq - q[h]) <= band + 1e-4)


def test_trajectory_feature_examples():
    features = np.array([[[1.0, 0.0]]])
    assert np.array_equal(trajectory_features(features, np.array([0, 0]), np.array([0])), [1.0, 0.0])
    v = np.array([[[0.6, 0.8]]])
    f = trajectory_features(v, np.array([0, 0, 0]), np.array([0, 0]))
    assert np.allclose(f, [0.6, 0.8, 0.6, 0.8])
    assert np.linalg.norm(f) == pytest.approx(np.sqrt(2))


def test_trajectory_feature_norm_bound(small_mdp, uniform_small):
    states, actions = sample_trajectories(small_mdp, uniform_small, 200, 3)
    feats = trajectory_features(small_mdp.features, states, actions)
    assert feats.shape == (200, small_mdp.H * small_mdp.d)
    assert np.all(np.linalg.norm(feats, axis=1) <= np.sqrt(small_mdp.H) + 1e-12)
    traj = Trajectory(tuple(states[0]), tuple(actions[0]))
    assert np.array_equal(trajectory_feature(small_mdp, traj), feats[0])


def test_trajectory_requires_consistent_lengths():
    with pytest.raises(ValueError):
        Trajectory((0, 1), (0, 0))


def test_optimal_value_bandit(bandit_mdp):
    value, pi = optimal_value(bandit_mdp, bandit_mdp.theta_star)
    assert value == 1.0
    assert pi.table()[0, 0, 1] == 1.0


def test_optimal_value_zero_reward_ties_to_lowest_action(small_mdp):
    value, pi = optimal_value(small_mdp, np.zeros((small_mdp.H, small_mdp.d)))
    assert value == 0.0
    assert np.all(pi.table()[..., 0] == 1.0)


def test_optimal_value_matches_occupancy_value(small_mdp):
    for seed in range(10):
        theta = np.random.default_rng(seed).uniform(-1, 1, (small_mdp.H, small_mdp.d))
        value, pi = optimal_value(small_mdp, theta)
        assert policy_value(small_mdp, pi, theta) == pytest.approx(value, abs=1e-10)


def test_optimal_value_beats_every_deterministic_policy(tiny_mdp):
    theta = tiny_mdp.theta_star
    best = optimal_value(tiny_mdp, theta)[0]
    values = [policy_value(tiny_mdp, pi, theta) for pi in deterministic_policies(tiny_mdp.H, tiny_mdp.S, tiny_mdp.A)]
    assert max(values) == pytest.approx(best, abs=1e-12)


def test_occupancy_deterministic_chain(chain_mdp):
    q = occupancy_measure(chain_mdp, uniform_policy(2, 3, 1)).q
    assert np.array_equal(q[:, :, 0], [[1, 0, 0], [0, 1, 0]])


def test_occupancy_uniform_symmetric_two_state():
    # both states jump to either state with probability 1/2 under every action
    features = np.full((2, 2, 1), 1.0)
    mu = np.full((2, 2, 1), 0.5)
    mdp = LinearMdp([0.5, 0.5], features, mu, np.zeros((2, 1)))
    q = occupancy_measure(mdp, uniform_policy(2, 2, 2)).q
    assert np.allclose(q, 0.25)


def test_occupancy_flow_and_normalisation(small_mdp):
    pi = random_policy(small_mdp.H, small_mdp.S, small_mdp.A, 2)
    q = occupancy_measure(small_mdp, pi).q
    assert np.allclose(q.sum(axis=(1, 2)), 1.0)
    P = small_mdp.transitions
    for h in range(small_mdp.H - 1):
        inflow = np.einsum("sa,sat->t", q[h], P[h])
        assert np.allclose(q[h + 1].sum(axis=1), inflow, atol=1e-12)


def test_policy_value_equals_dp(small_mdp):
    for seed in range(5):
        pi = random_policy(small_mdp.H, small_mdp.S, small_mdp.A, seed)
        assert policy_value(small_mdp, pi) == pytest.approx(policy_value_dp(small_mdp, pi), abs=1e-10)


def test_expected_feature_single_pair(chain_mdp):
    pi = uniform_policy(2, 3, 1)
    assert np.array_equal(expected_feature(chain_mdp, pi, 0), [1, 0, 0])
    assert np.array_equal(expected_feature(chain_mdp, pi, 1), [0, 1, 0])


def test_expected_feature_ignores_reward(small_mdp, uniform_small):
    other = LinearMdp(small_mdp.rho, small_mdp.features, small_mdp.mu, -small_mdp.theta_star)
    assert np.array_equal(expected_feature(small_mdp, uniform_small, 1), expected_feature(other, uniform_small, 1))


def test_expected_feature_matches_monte_carlo(small_mdp, uniform_small):
    n = 100_000
    states, actions = sample_trajectories(small_mdp, uniform_small, n, 5)
    feats = trajectory_features(small_mdp.features, states, actions)
    exact = expected_trajectory_feature(small_mdp, uniform_small)
    se = feats.std(axis=0) / np.sqrt(n)
    assert np.all(np.abs(feats.mean(axis=0) - exact) <= 3 * se + 1e-12)


def test_mixture_policy_value_is_weighted_average(small_mdp):
    a = random_policy(small_mdp.H, small_mdp.S, small_mdp.A, 1)
    b = random_policy(small_mdp.H, small_mdp.S, small_mdp.A, 2)
    mix = MixturePolicy([a, b], [0.3, 0.7])
    expected = 0.3 * policy_value_dp(small_mdp, a) + 0.7 * policy_value_dp(small_mdp, b)
    assert policy_value(small_mdp, mix) == pytest.approx(expected, abs=1e-12)


def test_policies_are_normalised(small_mdp):
    rng = np.random.default_rng(0)
    soft = SoftmaxLinearPolicy(rng.normal(size=(3, 4)), small_mdp.features, temperature=2.0)
    for pi in (soft, epsilon_greedy(optimal_value(small_mdp, small_mdp.theta_star)[1], 0.3), random_policy(3, 4, 2, 0)):
        assert np.allclose(pi.table().sum(axis=2), 1.0, atol=1e-9)
    with pytest.raises(ValueError):
        TabularPolicy(np.full((1, 1, 2), 0.7))
    with pytest.raises(ValueError):
        MixturePolicy([uniform_policy(1, 1, 2)], [0.5])


def test_optimal_q_consistency(small_mdp):
    Q = optimal_q(small_mdp, small_mdp.theta_star)
    value, _ = optimal_value(small_mdp, small_mdp.theta_star)
    assert small_mdp.rho @ Q[0].max(axis=1) == pytest.approx(value)


thetas = st.lists(st.floats(-2, 2, allow_nan=False), min_size=12, max_size=12)


@settings(max_examples=60, deadline=None)
@given(thetas, thetas, st.floats(0, 1))
def test_optimal_value_is_convex(t1, t2, lam):
    mdp = random_linear_mdp(4, 2, 4, H=3, rng=0)
    a = np.reshape(t1, (3, 4))
    b = np.reshape(t2, (3, 4))
    mid = optimal_value(mdp, lam * a + (1 - lam) * b)[0]
    assert mid <= lam * optimal_value(mdp, a)[0] + (1 - lam) * optimal_value(mdp, b)[0] + 1e-9


@settings(max_examples=60, deadline=None)
@given(thetas, thetas)
def test_optimal_value_is_lipschitz(t1, t2):
    mdp = random_linear_mdp(4, 2, 4, H=3, rng=0)
    a = np.reshape(t1, (3, 4))
    b = np.reshape(t2, (3, 4))
    diff = abs(optimal_value(mdp, a)[0] - optimal_value(mdp, b)[0])
    assert diff <= np.sqrt(3 * 4) * np.linalg.norm(a - b) + 1e-9

import numpy as np
import pytest

from robust_rlhf.contamination import AttackSpec, corrupt
from robust_rlhf.mdp import optimal_value, policy_value_dp, random_linear_mdp
from robust_rlhf.oracles import exact_oracle
from robust_rlhf.pipelines import (
    PipelineConfig,
    RobustRLHF,
    build_oracle,
    reference_feature,
    run_pipeline,
    split_dataset,
    suboptimality_gap,
)
from robust_rlhf.policy import MixturePolicy, epsilon_greedy, random_policy, uniform_policy
from robust_rlhf.preferences import sample_dataset


@pytest.fixture(scope="module")
def instance():
    mdp = random_linear_mdp(4, 2, 4, H=3, rng=np.random.default_rng(0), identifiable=True)
    best = optimal_value(mdp, mdp.theta_star)[1]
    mu0, mu1 = epsilon_greedy(best, 0.5), uniform_policy(3, 4, 2)
    return mdp, mu0, mu1


@pytest.fixture(scope="module")
def clean(instance):
    mdp, mu0, mu1 = instance
    return sample_dataset(mdp, mu0, mu1, 2000, 0)


def test_suboptimality_examples(bandit_mdp, small_mdp):
    best = optimal_value(small_mdp, small_mdp.theta_star)[1]
    assert suboptimality_gap(small_mdp, best) == 0.0
    assert suboptimality_gap(bandit_mdp, uniform_policy(1, 1, 2)) == pytest.approx(0.5)
    a, b = random_policy(3, 4, 2, 1), random_policy(3, 4, 2, 2)
    mix = MixturePolicy([a, b], [0.25, 0.75])
    opt = optimal_value(small_mdp, small_mdp.theta_star)[0]
    per_component = [opt - policy_value_dp(small_mdp, p) for p in (a, b)]
    assert suboptimality_gap(small_mdp, mix) == pytest.approx(0.25 * per_component[0] + 0.75 * per_component[1], abs=1e-12)


def test_oracle_at_true_reward_has_zero_gap(small_mdp):
    oracle = build_oracle("exact", mdp=small_mdp)
    assert suboptimality_gap(small_mdp, oracle(small_mdp.theta_star).policy) == 0.0


def test_split_is_deterministic_and_balanced(clean):
    a1, b1 = split_dataset(clean, 4)
    a2, b2 = split_dataset(clean, 4)
    assert np.array_equal(a1.labels, a2.labels) and np.array_equal(b1.states0, b2.states0)
    assert a1.N + b1.N == clean.N and a1.N - b1.N in (0, 1)
    odd = clean.subset(np.arange(7))
    assert [p.N for p in split_dataset(odd, 0)] == [4, 3]


@pytest.mark.parametrize("pipeline", ["uniform", "condition-number", "first-order", "baseline"])
def test_clean_data_small_gap(instance, clean, pipeline):
    mdp = instance[0]
    res = run_pipeline(clean, PipelineConfig(pipeline=pipeline, epsilon=0.0, T=10, K=5, seed=1), mdp=mdp)
    assert 0.0 <= suboptimality_gap(mdp, res.policy) <= 0.1 * mdp.H
    assert res.confidence_set is not None
    assert res.confidence_set.contains(res.reward_estimate.theta_hat)


def test_call_counts_and_ratio(instance, clean):
    mdp = instance[0]
    zo = run_pipeline(clean, PipelineConfig(pipeline="condition-number", T=20, K=10, seed=0), mdp=mdp)
    fo = run_pipeline(clean, PipelineConfig(pipeline="first-order", T=20, seed=0), mdp=mdp)
    un = run_pipeline(clean, PipelineConfig(pipeline="uniform", seed=0), mdp=mdp)
    assert (zo.oracle_calls, fo.oracle_calls, un.oracle_calls) == (20 * 11 + 1, 21, 1)
    assert zo.oracle_calls >= 10 * fo.oracle_calls
    assert suboptimality_gap(mdp, fo.policy) <= 0.05 * mdp.H


def test_zero_iterations(instance, clean):
    mdp = instance[0]
    for pipeline in ("condition-number", "first-order"):
        res = run_pipeline(clean, PipelineConfig(pipeline=pipeline, T=0, seed=2), mdp=mdp)
        assert np.array_equal(res.theta_bar, res.reward_estimate.theta_hat)
        assert res.oracle_calls == 1
        expected = exact_oracle(mdp, res.reward_estimate.theta_hat).policy
        assert np.array_equal(res.policy.table(), expected.table())


def test_zero_step_keeps_start(instance, clean):
    mdp = instance[0]
    res = run_pipeline(clean, PipelineConfig(pipeline="first-order", T=5, eta=0.0, seed=2), mdp=mdp)
    assert np.allclose(res.theta_bar, res.reward_estimate.theta_hat)


def test_iterates_stay_in_confidence_set(instance):
    mdp, mu0, mu1 = instance
    data = corrupt(sample_dataset(mdp, mu0, mu1, 1000, 3), AttackSpec(0.1), mdp.theta_star)
    for pipeline in ("condition-number", "first-order"):
        res = run_pipeline(data, PipelineConfig(pipeline=pipeline, epsilon=0.1, T=15, K=5, eta=0.5, seed=3), mdp=mdp)
        assert res.diagnostics["iterates_feasible"]
        assert res.confidence_set.contains(res.theta_bar, tol=1e-7)


def test_reference_feature_variants(instance, clean):
    mdp, mu0, _ = instance
    _, second = split_dataset(clean, 0)
    from_data = reference_feature(second, PipelineConfig())
    assert np.allclose(from_data, second.phi0().mean(axis=0))
    rolled = reference_feature(second, PipelineConfig(reference="rollouts", mu_ref=mu0, n_reference_rollouts=20_000), mdp, 0)
    assert np.linalg.norm(rolled - from_data) < 0.1
    given = reference_feature(second, PipelineConfig(reference=np.ones(12)))
    assert np.array_equal(given, np.ones(12))
    with pytest.raises(ValueError):
        reference_feature(second, PipelineConfig(reference="rollouts"))


def test_config_validation():
    with pytest.raises(ValueError):
        PipelineConfig(pipeline="other")
    with pytest.raises(ValueError):
        PipelineConfig(delta=1.0)
    with pytest.raises(ValueError):
        PipelineConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        build_oracle("exact")


def test_model_free_oracles_smoke(instance, clean):
    mdp = instance[0]
    rl = run_pipeline(clean, PipelineConfig(pipeline="uniform", oracle="rlsvi", seed=0), mdp=mdp)
    assert rl.diagnostics["oracle"] == "rlsvi"
    assert suboptimality_gap(mdp, rl.policy) >= 0.0
    pd = run_pipeline(
        clean,
        PipelineConfig(pipeline="first-order", oracle="primal-dual", T=3, oracle_params={"T": 50, "K": 8}, seed=0),
        mdp=mdp,
    )
    assert pd.oracle_calls == 4 and pd.diagnostics["oracle"] == "primal-dual"
    with pytest.raises(ValueError, match="no subgradient"):
        run_pipeline(clean, PipelineConfig(pipeline="first-order", oracle="rlsvi", T=2, seed=0), mdp=mdp)


def test_estimator_facade(instance, clean):
    mdp = instance[0]
    model = RobustRLHF(pipeline="first-order", T=5, mdp=mdp).fit(clean)
    assert model.oracle_calls_ == 6
    assert model.score() == pytest.approx(-suboptimality_gap(mdp, model.policy_))
    assert model.get_params()["pipeline"] == "first-order"
    assert model.coef_.shape == (12,)

import numpy as np
import pytest

from robust_rlhf.mdp import LinearMdp, random_linear_mdp
from robust_rlhf.policy import uniform_policy


@pytest.fixture
def small_mdp():
    return random_linear_mdp(4, 2, 4, H=3, rng=np.random.default_rng(0), identifiable=True)


@pytest.fixture
def tiny_mdp():
    return random_linear_mdp(2, 2, 3, H=2, rng=np.random.default_rng(1))


@pytest.fixture
def bandit_mdp():
    """One state, two actions, one step, rewards 0 and 1."""
    features = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    mu = np.array([[[1.0, 1.0]]])
    theta = np.array([[0.0, 1.0]])
    return LinearMdp([1.0], features, mu, theta)


@pytest.fixture
def chain_mdp():
    """Deterministic 3-state chain with a single action: s -> s + 1 (capped)."""
    S, H = 3, 2
    features = np.eye(S).reshape(S, 1, S)
    mu = np.zeros((H, S, S))
    for h in range(H):
        for s in range(S):
            mu[h, min(s + 1, S - 1), s] = 1.0
    theta = np.array([[0.0, 1.0, 0.5], [0.2, 0.0, 1.0]])
    return LinearMdp([1.0, 0.0, 0.0], features, mu, theta)


@pytest.fixture
def uniform_small(small_mdp):
    return uniform_policy(small_mdp.H, small_mdp.S, small_mdp.A)


_CRITERIA = []


@pytest.fixture
def criterion():
    """Record one acceptance line, print it, and fail the test if it did not pass."""

    def report(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _CRITERIA.append(line)
        print(line)
        assert passed, line

    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

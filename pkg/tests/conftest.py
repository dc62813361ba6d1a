import numpy as np
import pytest

from p3o.oracle import DiscreteOraclePomdp, make_oracle_2x2x2
from p3o.policy import TabularSoftmaxPolicy


def tabular_setup(horizon=2, seed=1, oracle=None):
    oracle = oracle or make_oracle_2x2x2(horizon)
    policy = TabularSoftmaxPolicy(oracle.n_obs, oracle.n_actions, oracle.horizon)
    params = np.random.default_rng(seed).normal(size=policy.n_params)
    return oracle, policy, params


def constant_reward_oracle(c, horizon=2):
    base = make_oracle_2x2x2(horizon)
    return DiscreteOraclePomdp(base.initial, base.transition, base.observation,
                               np.full((2, 2), float(c)), horizon)


@pytest.fixture
def oracle2():
    return tabular_setup(2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    acceptance = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(acceptance, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])

"""Inner particle belief filter."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import logsumexp

from p3o.belief import (BeliefParticles, BootstrapBeliefFilter, effective_sample_size, expected_reward,
                        init_belief, multinomial_indices, normalize_log_weights, propagate, resample_belief,
                        reweight, sample_predictive_observation, systematic_indices, weighted_covariance,
                        weighted_mean)
from p3o.core import PomdpModel
from p3o.envs import kalman_filter, make_linear_gaussian
from p3o.exceptions import BeliefCollapseError, ModelDivergenceError
from p3o.oracle import enumerate_belief, make_oracle_2x2x2


class Identity(PomdpModel):
    """s' = s, z ~ N(0, 1) independent of s, reward 2.5."""

    state_dim = action_dim = obs_dim = 1
    horizon = 3
    r_max = 2.5

    def sample_initial(self, rng, size=()):
        return rng.normal(size=np.atleast_1d(size).tolist() + [1] if size != () else [1])

    def transition_sample(self, s, a, rng):
        return np.broadcast_to(s, np.broadcast_shapes(np.shape(s), np.shape(a))).copy()

    def observation_logdensity(self, z, s):
        return np.zeros(np.broadcast_shapes(np.shape(z), np.shape(s))[:-1])

    def reward(self, s_next, a_prev, t):
        return np.full(np.broadcast_shapes(np.shape(s_next), np.shape(a_prev))[:-1], 2.5)


def _belief(states, weights):
    states = np.asarray(states, dtype=float)
    if states.ndim == 1:
        states = states[:, None]
    with np.errstate(divide="ignore"):
        log_w = np.log(np.asarray(weights, dtype=float))
    return BeliefParticles(states, log_w, np.zeros(()))


def test_init_single_particle(rng):
    b = init_belief(make_oracle_2x2x2(), 1, rng)
    assert b.states.shape == (1, 1) and np.exp(b.log_weights[0]) == 1.0


def test_default_particle_count():
    assert BootstrapBeliefFilter().num_particles == 32


def test_init_frequencies_match_prior(rng):
    o = make_oracle_2x2x2()
    n = 10 ** 5
    b = init_belief(o, n, rng)
    p = o.initial[1]
    assert abs(b.states.mean() - p) < 3 * np.sqrt(p * (1 - p) / n)
    assert np.allclose(np.exp(b.log_weights), 1.0 / n)


def test_identity_dynamics_leave_states(rng):
    b = init_belief(Identity(), 5, rng)
    assert np.array_equal(propagate(b, np.zeros(1), Identity(), rng).states, b.states)


def test_propagate_linear_gaussian_moment(rng):
    m = make_linear_gaussian()
    n = 10 ** 4
    b = _belief(rng.normal(1.0, 0.3, n), np.full(n, 1.0 / n))
    a = np.array([0.5])
    after = propagate(b, a, m, rng)
    expect = 0.9 * b.states.mean() + 0.5
    se = after.states.std() / np.sqrt(n)
    assert abs(after.states.mean() - expect) < 4 * se


def test_propagate_oracle_frequencies(rng):
    o = make_oracle_2x2x2()
    n = 10 ** 5
    after = propagate(_belief(np.zeros(n), np.full(n, 1.0 / n)), np.array([1.0]), o, rng)
    p = o.transition[1, 0, 1]
    assert abs(after.states.mean() - p) < 4 * np.sqrt(p * (1 - p) / n)


def test_propagate_flags_divergence(rng):
    class Blowup(Identity):
        def transition_sample(self, s, a, rng):
            out = np.array(s, dtype=float, copy=True)
            out[..., 2, :] = np.inf
            return out
    with pytest.raises(ModelDivergenceError) as err:
        propagate(init_belief(Blowup(), 4, rng), np.zeros(1), Blowup(), rng)
    assert err.value.index == (2,)


def test_reweight_constant_likelihood_keeps_weights(rng):
    b = _belief([0.0, 1.0, 2.0], [0.2, 0.3, 0.5])
    out = reweight(b, np.zeros(1), Identity())
    assert np.allclose(out.log_weights, b.log_weights)
    assert out.log_norm_increment == pytest.approx(0.0)


def test_reweight_hand_example():
    class TwoLik(Identity):
        def observation_logdensity(self, z, s):
            return np.log(np.where(s[..., 0] > 0.5, 0.6, 0.2))
    out = reweight(_belief([0.0, 1.0], [0.5, 0.5]), np.zeros(1), TwoLik())
    assert np.allclose(np.exp(out.log_weights), [0.25, 0.75])
    assert out.log_norm_increment == pytest.approx(np.log(0.4))


def test_reweight_collapse_signalled_or_flagged():
    class Never(Identity):
        def observation_logdensity(self, z, s):
            return np.full(np.shape(s)[:-1], -np.inf)
    b = _belief([0.0, 1.0], [0.5, 0.5])
    with pytest.raises(BeliefCollapseError):
        reweight(b, np.zeros(1), Never())
    soft = reweight(b, np.zeros(1), Never(), strict=False)
    assert bool(soft.collapsed) and soft.log_norm_increment == -np.inf


def test_particle_belief_matches_exact_belief(rng):
    o = make_oracle_2x2x2()
    n = 10 ** 5
    obs, acts = [0, 1, 1], [0, 1]
    b = init_belief(o, n, rng)
    b = reweight(b, np.array([obs[0]], dtype=float), o)
    for a, z in zip(acts, obs[1:]):
        b, _ = resample_belief(b, rng)
        b = propagate(b, np.array([a], dtype=float), o, rng)
        b = reweight(b, np.array([z], dtype=float), o)
    p1 = np.exp(logsumexp(b.log_weights[b.states[:, 0] == 1]))
    exact = enumerate_belief(o, obs, acts)
    assert 0.5 * np.abs(np.array([1 - p1, p1]) - exact).sum() <= 0.01


def test_expected_reward_constant_and_point_mass():
    b = _belief([0.0, 3.0, -1.0], [0.1, 0.3, 0.6])
    assert expected_reward(b, np.zeros(1), 1, Identity()) == pytest.approx(2.5)
    o = make_oracle_2x2x2()
    point = _belief([1.0, 0.0], [1.0, 0.0])
    assert expected_reward(point, np.array([1.0]), 1, o) == pytest.approx(o.reward_table[1, 1])


def test_expected_reward_matches_exact_belief(rng):
    o = make_oracle_2x2x2()
    n = 10 ** 4
    exact = enumerate_belief(o, [1])
    b = reweight(init_belief(o, n, rng), np.array([1.0]), o)
    est = expected_reward(b, np.array([0.0]), 1, o)
    assert abs(est - exact @ o.reward_table[:, 0]) <= 3 * o.r_max / np.sqrt(n)


def test_predictive_single_particle_uses_its_state(rng):
    o = make_oracle_2x2x2()
    b = BeliefParticles(np.ones((20000, 1, 1)), np.zeros((20000, 1)), np.zeros(20000))
    z = sample_predictive_observation(b, o, rng)
    p = o.observation[1, 1]
    assert abs(z.mean() - p) < 4 * np.sqrt(p * (1 - p) / 20000)


def test_predictive_matches_mixture(rng):
    o = make_oracle_2x2x2()
    n = 10 ** 5
    w = np.array([0.3, 0.7])
    b = BeliefParticles(np.broadcast_to([[0.0], [1.0]], (n, 2, 1)).copy(), np.log(np.tile(w, (n, 1))), np.zeros(n))
    z = sample_predictive_observation(b, o, rng)
    p = w @ o.observation[1]
    assert abs(z.mean() - p) < 3 * np.sqrt(p * (1 - p) / n)


def test_predictive_duplicate_particles_equal_single(rng):
    o = make_oracle_2x2x2()
    n = 50000
    b = BeliefParticles(np.ones((n, 2, 1)), np.log(np.tile([0.9, 0.1], (n, 1))), np.zeros(n))
    z = sample_predictive_observation(b, o, rng)
    p = o.observation[1, 1]
    assert abs(z.mean() - p) < 4 * np.sqrt(p * (1 - p) / n)


def test_resample_uniform_and_degenerate(rng):
    n = 10 ** 5
    idx = multinomial_indices(np.full(4, 0.25), rng, n=n)
    counts = np.bincount(idx, minlength=4)
    assert np.all(np.abs(counts - n / 4) < 4 * np.sqrt(n * 0.25 * 0.75))
    b, idx = resample_belief(_belief([5.0, 6.0, 7.0], [1.0, 0.0, 0.0]), rng)
    assert np.all(idx == 0) and np.all(b.states == 5.0)
    assert np.allclose(np.exp(b.log_weights), 1 / 3)


def test_resample_binomial_counts(rng):
    n = 10 ** 5
    idx = multinomial_indices(np.array([0.7, 0.3]), rng, n=n)
    assert abs(np.sum(idx == 0) - 0.7 * n) < 3 * np.sqrt(n * 0.21)
    sidx = systematic_indices(np.array([0.7, 0.3]), rng, n=n)
    assert abs(np.sum(sidx == 0) - 0.7 * n) <= 1


def test_resampling_preserves_expectation(rng):
    w = np.array([0.1, 0.2, 0.3, 0.4])
    x = np.array([1.0, -2.0, 5.0, 0.5])
    reps = np.array([x[multinomial_indices(w, rng)].mean() for _ in range(20000)])
    assert abs(reps.mean() - w @ x) < 4 * reps.std() / np.sqrt(len(reps))


def test_ess_bounds():
    assert effective_sample_size(np.full(8, 1 / 8)) == pytest.approx(8)
    assert effective_sample_size(np.eye(5)[0]) == pytest.approx(1)


def test_weighted_moments():
    b = _belief(np.array([[0.0, 0.0], [2.0, 0.0]]), [0.5, 0.5])
    assert np.allclose(weighted_mean(b), [1.0, 0.0])
    assert np.allclose(weighted_covariance(b), [[1.0, 0.0], [0.0, 0.0]])


def test_marginal_likelihood_unbiased_on_oracle():
    o = make_oracle_2x2x2()
    obs, acts = [0, 1, 1], [0, 1]
    exact_b = o.initial * o.observation[obs[0]]
    lik = exact_b.sum()
    b = exact_b / lik
    for a, z in zip(acts, obs[1:]):
        pred = o.transition[:, :, a] @ b
        pz = pred @ o.observation[z]
        lik *= pz
        b = pred * o.observation[z] / pz
    rng = np.random.default_rng(8)
    R, M = 10 ** 4, 8
    filt = BootstrapBeliefFilter(M)
    bel = filt.init(o, R, rng)
    bel = reweight(bel, np.full((R, 1), obs[0], dtype=float), o)
    logz = bel.log_norm_increment.copy()
    for a, z in zip(acts, obs[1:]):
        bel, _ = filt.resample(bel, rng)
        bel = filt.propagate(bel, np.full((R, 1), a, dtype=float), o, rng)
        bel = reweight(bel, np.full((R, 1), z, dtype=float), o)
        logz += bel.log_norm_increment
    est = np.exp(logz)
    assert abs(est.mean() - lik) < 3 * est.std() / np.sqrt(R)


def test_kalman_agreement():
    m = make_linear_gaussian()
    rng = np.random.default_rng(2)
    T, M = 100, 1000
    s = m.sample_initial(rng)
    zs = [m.observation_sample(s, rng)]
    acts = rng.normal(0, 0.3, size=(T, 1))
    for t in range(T):
        s = m.transition_sample(s, acts[t], rng)
        zs.append(m.observation_sample(s, rng))
    zs = np.array(zs)
    km, kc = kalman_filter(m, zs, acts)
    b = reweight(init_belief(m, M, rng), zs[0], m)
    err = [weighted_mean(b)[0] - km[0, 0]]
    for t in range(T):
        b, _ = resample_belief(b, rng)
        b = propagate(b, acts[t], m, rng)
        b = reweight(b, zs[t + 1], m)
        err.append(weighted_mean(b)[0] - km[t + 1, 0])
    rmse = np.sqrt(np.mean(np.square(err)))
    assert rmse <= 0.1 * np.sqrt(np.mean(kc[:, 0, 0]))


@settings(max_examples=50, deadline=None)
@given(logw=st.lists(st.floats(-50, 50), min_size=1, max_size=40))
def test_property_normalisation(logw):
    norm, total = normalize_log_weights(np.array(logw))
    assert abs(np.exp(norm).sum() - 1.0) <= 1e-10
    assert total == pytest.approx(logsumexp(logw))


@settings(max_examples=30, deadline=None)
@given(m=st.integers(1, 30), seed=st.integers(0, 10 ** 6))
def test_property_reweight_normalises_and_keeps_size(m, seed):
    rng = np.random.default_rng(seed)
    model = make_linear_gaussian()
    b = init_belief(model, m, rng)
    out = reweight(propagate(b, np.zeros(1), model, rng), rng.normal(size=1), model)
    assert out.num_particles == m
    assert abs(np.exp(out.log_weights).sum() - 1) <= 1e-10

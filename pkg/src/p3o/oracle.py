"""Tabular POMDP small enough to enumerate every observation-action history.

Exact beliefs, the risk-sensitive objective, its gradient, the risk-neutral
(REINFORCE) gradient and the reward-tilted history posterior are computed
here by brute force and serve as ground truth for the Monte Carlo routines.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .belief import BeliefParticles, normalize_log_weights
from .core import PomdpModel
from .exceptions import ConfigError, ImpossibleHistoryError

ROW_SUM_TOL = 1e-12


def _categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF draw along the last axis of ``probs``."""
    c = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[:-1] + (1,)) * c[..., -1:]
    return np.minimum(np.sum(c <= u, axis=-1), probs.shape[-1] - 1)


def _idx(x) -> np.ndarray:
    return np.asarray(x)[..., 0].astype(np.int64)


class DiscreteOraclePomdp(PomdpModel):
    """Finite POMDP given by probability tables.

    Parameters
    ----------
    initial : (S,) array
    transition : (S, S, A) array, ``transition[s_next, s, a]``
    observation : (Z, S) array, ``observation[z, s]``
    reward : (S, A) array, ``reward[s_next, a_prev]``
    horizon : int
    """

    discrete = True
    state_dim = action_dim = obs_dim = 1
    action_bound = None

    def __init__(self, initial, transition, observation, reward, horizon: int, name: str = "oracle"):
        self.initial = np.asarray(initial, dtype=float)
        self.transition = np.asarray(transition, dtype=float)
        self.observation = np.asarray(observation, dtype=float)
        self.reward_table = np.asarray(reward, dtype=float)
        self.horizon = int(horizon)
        self.name = name
        self._validate()
        self.n_states = self.initial.shape[0]
        self.n_actions = self.transition.shape[2]
        self.n_obs = self.observation.shape[0]
        self.r_max = float(np.max(np.abs(self.reward_table)))
        with np.errstate(divide="ignore"):
            self._log_init = np.log(self.initial)
            self._log_f = np.log(self.transition)
            self._log_g = np.log(self.observation)

    def _validate(self):
        S = self.initial.shape[0] if self.initial.ndim == 1 else -1
        if self.initial.ndim != 1:
            raise ConfigError("initial distribution must be a vector")
        if self.transition.ndim != 3 or self.transition.shape[:2] != (S, S):
            raise ConfigError(f"transition table must have shape (S, S, A) with S={S}")
        if self.observation.ndim != 2 or self.observation.shape[1] != S:
            raise ConfigError(f"observation table must have shape (Z, S) with S={S}")
        A = self.transition.shape[2]
        if self.reward_table.shape != (S, A):
            raise ConfigError(f"reward table must have shape (S, A) = ({S}, {A})")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        for name, table, axis in (
            ("initial", self.initial, 0),
            ("transition", self.transition, 0),
            ("observation", self.observation, 0),
        ):
            if np.any(table < 0) or not np.all(np.isfinite(table)):
                raise ConfigError(f"{name} table has negative or non-finite entries")
            err = np.max(np.abs(table.sum(axis=axis) - 1.0))
            if err > ROW_SUM_TOL:
                raise ConfigError(f"{name} probabilities do not sum to 1 (max error {err:.3g})")

    # -- PomdpModel contract -------------------------------------------------
    def sample_initial(self, rng, size=()):
        size = tuple(np.atleast_1d(size)) if size != () else ()
        probs = np.broadcast_to(self.initial, size + (self.n_states,))
        return _categorical(probs, rng)[..., None].astype(float)

    def initial_logdensity(self, s):
        return self._log_init[_idx(s)]

    def transition_sample(self, s, a, rng):
        s_i, a_i = np.broadcast_arrays(_idx(s), _idx(a))
        probs = np.moveaxis(self.transition[:, s_i, a_i], 0, -1)
        return _categorical(probs, rng)[..., None].astype(float)

    def transition_logdensity(self, s_next, s, a):
        return self._log_f[_idx(s_next), _idx(s), _idx(a)]

    def observation_sample(self, s, rng):
        probs = np.moveaxis(self.observation[:, _idx(s)], 0, -1)
        return _categorical(probs, rng)[..., None].astype(float)

    def observation_logdensity(self, z, s):
        return self._log_g[_idx(z), _idx(s)]

    def reward(self, s_next, a_prev, t):
        return self.reward_table[_idx(s_next), _idx(a_prev)]

    def belief_transition_logdensity(self, s_next, s_cur, log_w, a):
        """``log sum_k w_k f(s_next^m | s^k, a)`` per row, candidate and ``m``.

        Shapes: ``s_next`` (R, M, 1), ``s_cur`` (R, C, M', 1), ``log_w``
        (R, C, M'), ``a`` (R, 1). Particle weights are first pooled per
        discrete state, which turns the M x M' sum into M x S.
        """
        onehot = _idx(s_cur)[..., None] == np.arange(self.n_states)
        hist = np.einsum("rcks,rck->rcs", onehot, np.exp(log_w))
        # f[s_next^m, s, a_r] -> (R, M, S)
        f_rows = self.transition[_idx(s_next), :, _idx(a)[:, None]]
        with np.errstate(divide="ignore"):
            return np.log(np.einsum("rcs,rms->rcm", hist, f_rows))

    def describe(self):
        d = super().describe()
        d.update(n_states=self.n_states, n_actions=self.n_actions, n_obs=self.n_obs)
        return d

    def to_dict(self) -> dict:
        return {
            "initial": self.initial.tolist(),
            "transition": self.transition.tolist(),
            "observation": self.observation.tolist(),
            "reward": self.reward_table.tolist(),
            "horizon": self.horizon,
        }


def load_oracle(path) -> DiscreteOraclePomdp:
    """Read oracle tables from a JSON file; row sums are validated on load."""
    text = Path(path).read_text()
    try:
        spec = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: not valid JSON ({err})") from err
    missing = {"initial", "transition", "observation", "reward", "horizon"} - set(spec)
    if missing:
        raise ConfigError(f"{path}: missing keys {sorted(missing)}")
    return DiscreteOraclePomdp(
        spec["initial"], spec["transition"], spec["observation"], spec["reward"],
        spec["horizon"], name=spec.get("name", Path(path).stem),
    )


def save_oracle(model: DiscreteOraclePomdp, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2))


def make_oracle_2x2x2(horizon: int = 2) -> DiscreteOraclePomdp:
    """Two states, observations and actions with mixed rewards.

    Action 0 mostly keeps the state, action 1 mostly flips it and costs a
    little; state 1 pays 1 per step.
    """
    transition = np.zeros((2, 2, 2))
    transition[:, :, 0] = [[0.9, 0.1], [0.1, 0.9]]
    transition[:, :, 1] = [[0.2, 0.8], [0.8, 0.2]]
    observation = np.array([[0.8, 0.4], [0.2, 0.6]])
    reward = np.array([[0.0, -0.25], [1.0, 0.75]])
    return DiscreteOraclePomdp([0.5, 0.5], transition, observation, reward, horizon,
                               name="oracle-2x2x2")


class ExactBeliefFilter:
    """Drop-in replacement for the particle belief filter on tabular models.

    The belief is stored as a :class:`BeliefParticles` whose "particles" are
    the ``S`` discrete states and whose weights are the exact posterior.
    Resampling is the identity.
    """

    exact = True

    def __init__(self, model: DiscreteOraclePomdp):
        self.model = model
        self.num_particles = model.n_states

    def _grid(self, batch):
        return np.broadcast_to(np.arange(self.model.n_states, dtype=float)[:, None],
                               (batch, self.model.n_states, 1)).copy()

    def init(self, model, batch, rng):
        with np.errstate(divide="ignore"):
            logw = np.broadcast_to(np.log(model.initial), (batch, model.n_states)).copy()
        return BeliefParticles(self._grid(batch), logw, np.zeros(batch))

    def propagate(self, belief, actions, model, rng):
        a = _idx(actions)
        b = np.exp(belief.log_weights)  # (B, S)
        f = model.transition[:, :, a]  # (S', S, B)
        nb = np.einsum("psb,bs->bp", f, b)
        with np.errstate(divide="ignore"):
            logw = np.log(nb)
        return BeliefParticles(belief.states, logw, belief.log_norm_increment, belief.collapsed)

    def reweight(self, belief, observations, model):
        z = _idx(observations)
        with np.errstate(divide="ignore"):
            incr = np.log(model.observation[z, :])  # (B, S)
        new_logw, total = normalize_log_weights(belief.log_weights + incr)
        collapsed = ~np.isfinite(total) | belief.collapsed
        return BeliefParticles(belief.states, new_logw, np.where(collapsed, -np.inf, total), collapsed)

    def expected_reward(self, belief, actions_prev, t, model):
        a = _idx(actions_prev)
        r = model.reward_table[:, a].T  # (B, S)
        b = np.exp(belief.log_weights)
        return np.where(belief.collapsed, np.nan, np.sum(b * r, axis=-1))

    def sample_predictive(self, belief, model, rng):
        pz = np.exp(belief.log_weights) @ model.observation.T  # (B, Z)
        return _categorical(pz, rng)[:, None].astype(float)

    def resample(self, belief, rng):
        idx = np.broadcast_to(np.arange(belief.num_particles), belief.log_weights.shape).copy()
        return belief, idx

    def __repr__(self):
        return f"ExactBeliefFilter({self.model.name})"


# -- enumeration --------------------------------------------------------------

def enumerate_belief(oracle: DiscreteOraclePomdp, observations, actions=()) -> np.ndarray:
    """Exact filtering distribution ``p(s_t | z_{0:t}, a_{0:t-1})``."""
    obs = np.asarray(observations).reshape(-1).astype(np.int64)
    acts = np.asarray(actions).reshape(-1).astype(np.int64)
    if len(obs) != len(acts) + 1:
        raise ValueError("need exactly one more observation than actions")
    b = oracle.initial * oracle.observation[obs[0]]
    for t, a in enumerate(acts):
        total = b.sum()
        if total <= 0:
            raise ImpossibleHistoryError(f"history prefix up to step {t} has zero probability")
        b = oracle.transition[:, :, a] @ (b / total)
        b = b * oracle.observation[obs[t + 1]]
    total = b.sum()
    if total <= 0:
        raise ImpossibleHistoryError("history has zero probability")
    return b / total


@dataclass
class HistoryEnumeration:
    observations: np.ndarray  # (H, T+1) int
    actions: np.ndarray  # (H, T) int
    log_obs: np.ndarray  # (H,) log p(z_0) + sum_t log p(z_{t+1} | history)
    log_policy: np.ndarray  # (H, T) log pi(a_t | history)
    ell: np.ndarray  # (H, T) expected reward of steps 1..T

    @property
    def log_prior(self) -> np.ndarray:
        return self.log_obs + self.log_policy.sum(axis=1)

    def batch_arrays(self):
        return self.observations[..., None].astype(float), self.actions[..., None].astype(float)

    def prefix_codes(self, length: int) -> np.ndarray:
        """Integer id of the interleaved prefix ``(z_0, a_0, z_1, ...)`` of ``length`` symbols."""
        H = len(self.observations)
        seq = np.empty((H, 2 * self.actions.shape[1] + 1), dtype=np.int64)
        seq[:, 0::2] = self.observations
        seq[:, 1::2] = self.actions
        radix = int(max(seq.max(), 0)) + 1
        code = np.zeros(H, dtype=np.int64)
        for j in range(length):
            code = code * radix + seq[:, j]
        return code


def enumerate_histories(oracle: DiscreteOraclePomdp, policy, params) -> HistoryEnumeration:
    """Every ``(z_{0:T}, a_{0:T-1})`` with its exact probability terms.

    Histories of probability zero are kept with ``log_obs = -inf``.
    """
    S, Z, A, T = oracle.n_states, oracle.n_obs, oracle.n_actions, oracle.horizon
    with np.errstate(divide="ignore", invalid="ignore"):
        joint0 = oracle.initial[None, :] * oracle.observation  # (Z, S)
        pz0 = joint0.sum(axis=1)
        beliefs = joint0 / np.where(pz0 > 0, pz0, 1.0)[:, None]
        log_obs = np.log(pz0)
    obs = np.arange(Z)[:, None]
    acts = np.zeros((Z, 0), dtype=np.int64)
    log_pol = np.zeros((Z, 0))
    ell = np.zeros((Z, 0))
    carry = policy.advance(params, policy.initial_carry(Z), obs[:, :1].astype(float), None, 0)
    for t in range(T):
        H = len(obs)
        lp_all = policy.action_log_probs(params, carry)  # (H, A)
        # expand (history, action, observation)
        pred = np.einsum("psa,hs->hap", oracle.transition, beliefs)  # (H, A, S')
        joint = pred[:, :, None, :] * oracle.observation[None, None, :, :]  # (H, A, Z, S')
        pz = joint.sum(axis=-1)  # (H, A, Z)
        with np.errstate(divide="ignore", invalid="ignore"):
            new_b = joint / np.where(pz > 0, pz, 1.0)[..., None]
            step_ell = np.einsum("hazs,sa->haz", new_b, oracle.reward_table)
            log_pz = np.log(pz)
        a_idx = np.broadcast_to(np.arange(A)[None, :, None], (H, A, Z)).reshape(-1)
        z_idx = np.broadcast_to(np.arange(Z)[None, None, :], (H, A, Z)).reshape(-1)
        h_idx = np.repeat(np.arange(H), A * Z)
        obs = np.concatenate([obs[h_idx], z_idx[:, None]], axis=1)
        acts = np.concatenate([acts[h_idx], a_idx[:, None]], axis=1)
        log_pol = np.concatenate([log_pol[h_idx], lp_all[h_idx, a_idx][:, None]], axis=1)
        ell = np.concatenate([ell[h_idx], np.where(pz > 0, step_ell, 0.0).reshape(-1)[:, None]], axis=1)
        log_obs = log_obs[h_idx] + log_pz.reshape(-1)
        beliefs = new_b.reshape(-1, S)
        if t + 1 < T:
            carry = policy.advance(params, carry[h_idx], z_idx[:, None].astype(float),
                                   a_idx[:, None].astype(float), t + 1)
    return HistoryEnumeration(obs, acts, log_obs, log_pol, ell)


def _check_eta(eta):
    if not eta > 0:
        raise ValueError("eta must be positive")


def enumerate_log_normalizer(oracle, policy, params, eta: float) -> float:
    """``log p_phi(O_{1:T})`` with ``p(O_t | history) = exp(eta * ell_t)``."""
    _check_eta(eta)
    en = enumerate_histories(oracle, policy, params)
    return float(logsumexp(en.log_prior + eta * en.ell.sum(axis=1)))


def enumerate_risk_objective(oracle, policy, params, eta: float) -> float:
    """Risk-sensitive belief-space objective ``(1/eta) log E[exp(eta sum ell)]``."""
    return enumerate_log_normalizer(oracle, policy, params, eta) / eta


def enumerate_risk_neutral_objective(oracle, policy, params) -> float:
    en = enumerate_histories(oracle, policy, params)
    p = np.exp(en.log_prior)
    return float(np.sum(p * en.ell.sum(axis=1)))


def enumerate_posterior(oracle, policy, params, eta: float):
    """Return the enumeration and the normalised log posterior over histories."""
    _check_eta(eta)
    en = enumerate_histories(oracle, policy, params)
    logu = en.log_prior + eta * en.ell.sum(axis=1)
    return en, logu - logsumexp(logu)


def enumerate_risk_gradient(oracle, policy, params, eta: float) -> np.ndarray:
    """Exact gradient of the risk-sensitive objective via the posterior score."""
    en, log_post = enumerate_posterior(oracle, policy, params, eta)
    obs, acts = en.batch_arrays()
    weights = np.exp(log_post) / eta
    return policy.score(params, obs, acts, None, step_weights=weights)[1]


def enumerate_reinforce_gradient(oracle, policy, params) -> np.ndarray:
    """Exact risk-neutral gradient as reward-to-go weighted scores."""
    en = enumerate_histories(oracle, policy, params)
    obs, acts = en.batch_arrays()
    p = np.exp(en.log_prior)
    to_go = np.cumsum(en.ell[:, ::-1], axis=1)[:, ::-1]  # sum_{k >= t+1} ell_k
    return policy.score(params, obs, acts, None, step_weights=p[:, None] * to_go)[1]


def _group_logsumexp(codes: np.ndarray, values: np.ndarray) -> np.ndarray:
    """For each row, logsumexp of ``values`` over rows sharing its code."""
    uniq, inv = np.unique(codes, return_inverse=True)
    out = np.full(len(uniq), -np.inf)
    order = np.argsort(inv, kind="stable")
    bounds = np.searchsorted(inv[order], np.arange(len(uniq) + 1))
    v = values[order]
    for g in range(len(uniq)):
        out[g] = logsumexp(v[bounds[g]:bounds[g + 1]])
    return out[inv]


def remark_decomposition(oracle, policy, params, eta: float, include_policy: bool = True):
    """Log of the optimality-conditioned factorisation of the history posterior.

    Every factor is computed from its definition as a ratio of enumerated
    marginals: ``p(z_0 | O_{1:T})``, ``p(z_{t+1} | h_t, a_t, O_{t+1:T})`` and the
    future-optimality ratio ``p(O_{t+1:T} | h_t, a_t) / p(O_{t+1:T} | h_t)``.
    With ``include_policy`` the prior action probability ``pi(a_t | h_t)`` is
    multiplied in as well. Returns ``(enumeration, log_posterior, log_rhs)``.
    """
    en, log_post = enumerate_posterior(oracle, policy, params, eta)
    T = en.actions.shape[1]
    log_prior = en.log_prior
    ell = en.ell
    # future optimality from step k onwards: sum_{j>=k} ell_j ; ell[:, j-1] is step j
    future = np.concatenate([np.cumsum(ell[:, ::-1], axis=1)[:, ::-1], np.zeros((len(ell), 1))], axis=1)
    # joint mass of a prefix with O_{t+1:T}:  sum over extensions of p(traj) exp(eta * future[t])
    def joint(length, t_from):
        return _group_logsumexp(en.prefix_codes(length), log_prior + eta * future[:, t_from])

    def marginal(length):
        return _group_logsumexp(en.prefix_codes(length), log_prior)

    log_total = logsumexp(log_prior + eta * future[:, 0])
    log_rhs = joint(1, 0) - log_total  # p(z_0 | O_{1:T})
    for t in range(T):
        # prefixes: h_t has 2t+1 symbols, (h_t, a_t) has 2t+2, h_{t+1} has 2t+3
        lz = joint(2 * t + 3, t) - joint(2 * t + 2, t)  # p(z_{t+1} | h_t, a_t, O_{t+1:T})
        log_q = joint(2 * t + 2, t) - marginal(2 * t + 2)  # log p(O_{t+1:T} | h_t, a_t)
        log_v = joint(2 * t + 1, t) - marginal(2 * t + 1)  # log p(O_{t+1:T} | h_t)
        log_rhs = log_rhs + lz + log_q - log_v
        if include_policy:
            log_rhs = log_rhs + en.log_policy[:, t]
    return en, log_post, log_rhs


def verify_remark_decomposition(oracle, policy, params, eta: float, tol: float = 1e-10,
                                include_policy: bool = True) -> bool:
    """True when the factorisation matches the posterior up to one shared constant."""
    _, log_post, log_rhs = remark_decomposition(oracle, policy, params, eta, include_policy)
    support = np.isfinite(log_post)
    if not np.array_equal(support, np.isfinite(log_rhs)):
        return False
    ratio = np.exp(log_rhs[support] - log_post[support])
    c = ratio.mean()
    return bool(np.max(np.abs(ratio - c)) <= tol * max(1.0, abs(c)))

"""Nested particle filter over belief-space histories.

An outer filter of ``N`` history particles targets the reward-tilted history
distribution; each history particle carries a private belief filter of ``M``
state particles which supplies the predictive observation and the expected
reward used as potential.

Tape layout (time index ``t = 0..T``, slot index ``n``):

* ``states[t, n]``, ``log_w[t, n]`` -- belief of slot ``n`` after the step-``t``
  observation update (before any resampling);
* ``log_v[t, n]`` -- normalised history log-weight;
* ``ancestors[t, n]`` -- slot at ``t-1`` that slot ``n`` descends from;
* ``b_indices[t, n]`` -- belief ancestor indices (into the ancestor's belief);
* ``observations[t, n]`` -- ``z_t``; ``actions[t, n]`` -- ``a_{t-1}`` (zero at 0);
* ``ell[t, n]``, ``log_potential[t, n]`` -- expected reward and log potential;
* ``carries[t, n]``, ``features[t, n]`` -- policy state after consuming ``z_t``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
from scipy.special import logsumexp

from .belief import BeliefParticles, BootstrapBeliefFilter, resample_indices
from .core import Trajectory, TrajectoryBatch
from .exceptions import AllParticlesCollapsedError, ConfigError
from .rng import as_generator

TAPE_MAGIC = b"P3OTAPE1"


@dataclass
class NestedSmcConfig:
    """Sampler settings.

    ``slew_penalty=None`` takes the coefficient from the model (0 if absent).
    ``ess_threshold`` enables adaptive outer resampling when the effective
    sample size falls below ``ess_threshold * N``; ``None`` resamples every step.
    """

    n_history: int = 128
    n_belief: int = 32
    eta: float = 1.0
    resample_mode: str = "multinomial"
    seed: int = 0
    slew_penalty: Optional[float] = None
    ess_threshold: Optional[float] = None

    def __post_init__(self):
        if int(self.n_history) < 1:
            raise ConfigError("n_history must be >= 1")
        if int(self.n_belief) < 1:
            raise ConfigError("n_belief must be >= 1")
        if not (np.isfinite(self.eta) and self.eta > 0):
            raise ConfigError("eta must be a positive finite number")
        if self.resample_mode not in ("multinomial", "systematic"):
            raise ConfigError(f"unknown resample_mode {self.resample_mode!r}")
        if self.ess_threshold is not None and not 0 < self.ess_threshold <= 1:
            raise ConfigError("ess_threshold must lie in (0, 1]")
        if self.slew_penalty is not None and self.slew_penalty < 0:
            raise ConfigError("slew_penalty must be non-negative")


def effective_sample_size(weights) -> float:
    """``1 / sum w^2`` for normalised weights; lies in ``[1, N]``."""
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(w * w))


@dataclass
class HistoryParticle:
    trajectory: Trajectory
    log_weight: float
    belief: BeliefParticles
    lineage: np.ndarray  # slot index at every step 0..T


@dataclass
class FilterTape:
    states: np.ndarray
    log_w: np.ndarray
    log_v: np.ndarray
    ancestors: np.ndarray
    b_indices: np.ndarray
    observations: np.ndarray
    actions: np.ndarray
    ell: np.ndarray
    log_potential: np.ndarray
    carries: Optional[np.ndarray] = None
    features: Optional[np.ndarray] = None
    eta: float = 1.0
    slew_penalty: float = 0.0
    exact_beliefs: bool = False

    @property
    def horizon(self) -> int:
        return self.log_v.shape[0] - 1

    @property
    def n_history(self) -> int:
        return self.log_v.shape[1]

    @property
    def n_belief(self) -> int:
        return self.log_w.shape[2]

    def lineage_indices(self) -> np.ndarray:
        """Slot indices ``(N, T+1)`` of the genealogy of every terminal slot."""
        T, N = self.horizon, self.n_history
        idx = np.empty((N, T + 1), dtype=np.int64)
        idx[:, T] = np.arange(N)
        for t in range(T, 0, -1):
            idx[:, t - 1] = self.ancestors[t, idx[:, t]]
        return idx

    def gather(self, indices: np.ndarray, weights=None) -> TrajectoryBatch:
        """Trajectories whose step-``t`` entries come from slots ``indices[:, t]``."""
        indices = np.asarray(indices, dtype=np.int64)
        T = self.horizon
        steps = np.arange(T + 1)
        obs = self.observations[steps, indices]
        acts = self.actions[steps[1:], indices[:, 1:]]
        rewards = self.ell[steps[1:], indices[:, 1:]]
        feats = None
        if self.features is not None:
            feats = self.features[steps, indices]
        return TrajectoryBatch(obs, acts, weights=weights, rewards=rewards, policy_inputs=feats,
                               meta={"indices": indices})

    def terminal_batch(self) -> TrajectoryBatch:
        """Lineage trajectories weighted by the terminal history weights."""
        return self.gather(self.lineage_indices(), weights=np.exp(self.log_v[-1]))


@dataclass
class NestedFilterResult:
    tape: FilterTape
    log_normalizer: float
    log_increments: np.ndarray
    ess: np.ndarray  # outer ESS per step (before resampling)
    resampled: np.ndarray  # whether the outer filter resampled before step t
    n_collapsed: int = 0
    n_model_calls: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def batch(self) -> TrajectoryBatch:
        return self.tape.terminal_batch()

    def particles(self) -> List[HistoryParticle]:
        tape = self.tape
        lineage = tape.lineage_indices()
        batch = tape.gather(lineage)
        T = tape.horizon
        out = []
        for n in range(tape.n_history):
            belief = BeliefParticles(tape.states[T, n], tape.log_w[T, n], np.zeros(()))
            out.append(HistoryParticle(batch[n], float(tape.log_v[T, n]), belief, lineage[n]))
        return out


def _slew(model, config) -> float:
    if config.slew_penalty is not None:
        return float(config.slew_penalty)
    return float(getattr(model, "slew_penalty", 0.0) or 0.0)


def run_nested_filter(model, policy, params, config: NestedSmcConfig, rng=None,
                      belief_filter=None, tilt: bool = True) -> NestedFilterResult:
    """Run the nested filter for ``model.horizon`` steps.

    With ``tilt=False`` the outer filter neither reweights nor resamples, so
    the ``N`` histories are independent draws from the untilted belief-space
    process (used for risk-neutral baselines).
    """
    rng = as_generator(rng if rng is not None else config.seed)
    params = policy.check_params(params)
    bf = belief_filter or BootstrapBeliefFilter(config.n_belief)
    N, T = int(config.n_history), int(model.horizon)
    eta = float(config.eta)
    rho = _slew(model, config)
    hist_policy = policy.history_dependent

    belief = bf.init(model, N, rng)
    M = belief.num_particles
    ds, dz, da = model.state_dim, model.obs_dim, model.action_dim
    states = np.zeros((T + 1, N, M, ds))
    log_w = np.zeros((T + 1, N, M))
    log_v = np.zeros((T + 1, N))
    ancestors = np.zeros((T + 1, N), dtype=np.int64)
    b_idx = np.zeros((T + 1, N, M), dtype=np.int64)
    observations = np.zeros((T + 1, N, dz))
    actions = np.zeros((T + 1, N, da))
    ell = np.zeros((T + 1, N))
    log_pot = np.zeros((T + 1, N))
    carries = np.zeros((T + 1, N, policy.carry_dim)) if hist_policy else None
    features = np.zeros((T + 1, N, policy.feature_dim)) if policy.feature_dim else None

    # step 0: first observation from the prior predictive, then condition the belief on it
    z = bf.sample_predictive(belief, model, rng)
    belief = bf.reweight(belief, z, model)
    if np.all(belief.collapsed):
        raise AllParticlesCollapsedError("every belief collapsed on the first observation")
    ancestors[0] = np.arange(N)
    b_idx[0] = np.arange(M)
    observations[0] = z
    states[0], log_w[0] = belief.states, belief.log_weights
    cur_logv = np.where(belief.collapsed, -np.inf, -np.log(N))
    cur_logv = cur_logv - logsumexp(cur_logv)
    log_v[0] = cur_logv
    log_pot[0] = np.where(belief.collapsed, -np.inf, 0.0)
    carry = policy.advance(params, policy.initial_carry(N), z, None, 0)
    if hist_policy:
        carries[0] = carry
    feat = policy.features(belief.states, belief.log_weights)
    if features is not None:
        features[0] = feat
    prev_action = np.zeros((N, da))

    increments = np.zeros(T)
    ess = np.zeros(T + 1)
    ess[0] = effective_sample_size(np.exp(cur_logv))
    resampled = np.zeros(T, dtype=bool)
    n_collapsed = int(np.sum(belief.collapsed))
    for t in range(T):
        # outer resample
        do_resample = tilt and (config.ess_threshold is None or ess[t] < config.ess_threshold * N)
        if do_resample:
            A = resample_indices(np.exp(cur_logv), rng, scheme=config.resample_mode)
            base_logv = np.full(N, -np.log(N))
        else:
            A = np.arange(N)
            base_logv = cur_logv
        resampled[t] = do_resample
        belief = belief.take(A)
        carry = carry[A]
        prev_action = prev_action[A]
        feat_t = None if feat is None else feat[A]
        # inner resample, mutate, observe, reweight
        belief, B = bf.resample(belief, rng)
        a, _ = policy.sample(params, carry, feat_t, rng)
        belief = bf.propagate(belief, a, model, rng)
        z = bf.sample_predictive(belief, model, rng)
        belief = bf.reweight(belief, z, model)
        r = bf.expected_reward(belief, a, t + 1, model)
        with np.errstate(invalid="ignore"):
            lg = eta * r
            if rho > 0 and t > 0:
                lg = lg - eta * rho * np.sum((a - prev_action) ** 2, axis=-1)
        lg = np.where(belief.collapsed | ~np.isfinite(lg), -np.inf, lg)
        n_collapsed += int(np.sum(belief.collapsed))
        if tilt:
            if np.all(np.isneginf(lg)):
                raise AllParticlesCollapsedError(f"all {N} history particles collapsed at step {t + 1}")
            new = base_logv + lg
            total = logsumexp(new)
            increments[t] = total - logsumexp(base_logv)
            cur_logv = new - total
        else:
            cur_logv = np.full(N, -np.log(N))
        carry = policy.advance(params, carry, z, a, t + 1)
        feat = policy.features(belief.states, belief.log_weights)
        prev_action = a
        # record
        i = t + 1
        states[i], log_w[i] = belief.states, belief.log_weights
        log_v[i] = cur_logv
        ancestors[i] = A
        b_idx[i] = B
        observations[i] = z
        actions[i] = a
        ell[i] = r
        log_pot[i] = lg
        if hist_policy:
            carries[i] = carry
        if features is not None:
            features[i] = feat
        ess[i] = effective_sample_size(np.exp(cur_logv))

    tape = FilterTape(states, log_w, log_v, ancestors, b_idx, observations, actions, ell, log_pot,
                      carries, features, eta=eta, slew_penalty=rho,
                      exact_beliefs=bool(getattr(bf, "exact", False)))
    return NestedFilterResult(
        tape=tape,
        log_normalizer=float(np.sum(increments)) if tilt else float("nan"),
        log_increments=increments,
        ess=ess,
        resampled=resampled,
        n_collapsed=n_collapsed,
        n_model_calls=N * M * T,
    )


def sample_prior_rollouts(model, policy, params, n_rollouts: int, n_belief: int = 32, rng=None,
                          belief_filter=None) -> TrajectoryBatch:
    """Independent histories from the untilted belief-space process with ``ell`` estimates."""
    cfg = NestedSmcConfig(n_history=n_rollouts, n_belief=n_belief, eta=1.0)
    res = run_nested_filter(model, policy, params, cfg, rng, belief_filter=belief_filter, tilt=False)
    batch = res.tape.gather(np.broadcast_to(np.arange(n_rollouts)[:, None], (n_rollouts, model.horizon + 1)))
    batch.meta["n_model_calls"] = res.n_model_calls
    return batch


# -- binary export ------------------------------------------------------------

_TAPE_BLOCKS = ("states", "log_w", "log_v", "ancestors", "b_indices", "observations", "actions",
                "ell", "log_potential")


def save_tape(tape: FilterTape, path) -> None:
    """Write ``tape`` as header + step-major little-endian float64 blocks.

    Policy carries and features are not stored; :func:`load_tape` can
    recompute them by replaying the policy along the stored genealogy.
    """
    T1, N, M, ds = tape.states.shape
    dz, da = tape.observations.shape[2], tape.actions.shape[2]
    with open(path, "wb") as fh:
        fh.write(TAPE_MAGIC)
        fh.write(struct.pack("<6q", N, M, T1 - 1, ds, dz, da))
        fh.write(struct.pack("<2d", tape.eta, tape.slew_penalty))
        for t in range(T1):
            for name in _TAPE_BLOCKS:
                block = np.asarray(getattr(tape, name)[t], dtype="<f8")
                fh.write(block.tobytes(order="C"))


def load_tape(path, policy=None, params=None) -> FilterTape:
    data = Path(path).read_bytes()
    if data[:8] != TAPE_MAGIC:
        raise ConfigError(f"{path}: not a tape file (bad magic)")
    N, M, T, ds, dz, da = struct.unpack_from("<6q", data, 8)
    eta, rho = struct.unpack_from("<2d", data, 56)
    shapes = {
        "states": (N, M, ds), "log_w": (N, M), "log_v": (N,), "ancestors": (N,),
        "b_indices": (N, M), "observations": (N, dz), "actions": (N, da), "ell": (N,),
        "log_potential": (N,),
    }
    per_step = sum(int(np.prod(shapes[k])) for k in _TAPE_BLOCKS)
    expected = 72 + 8 * per_step * (T + 1)
    if len(data) != expected:
        raise ConfigError(f"{path}: truncated or oversized tape ({len(data)} bytes, expected {expected})")
    flat = np.frombuffer(data, dtype="<f8", offset=72).reshape(T + 1, per_step)
    out, pos = {}, 0
    for k in _TAPE_BLOCKS:
        n = int(np.prod(shapes[k]))
        out[k] = flat[:, pos:pos + n].reshape((T + 1,) + shapes[k]).astype(float)
        pos += n
    out["ancestors"] = out["ancestors"].astype(np.int64)
    out["b_indices"] = out["b_indices"].astype(np.int64)
    tape = FilterTape(**out, eta=eta, slew_penalty=rho)
    if policy is not None:
        attach_policy_state(tape, policy, params)
    return tape


def attach_policy_state(tape: FilterTape, policy, params) -> FilterTape:
    """Recompute carries and belief features by replaying the policy on the tape."""
    T, N = tape.horizon, tape.n_history
    if policy.feature_dim:
        tape.features = np.stack([policy.features(tape.states[t], tape.log_w[t]) for t in range(T + 1)])
    if policy.history_dependent:
        carries = np.zeros((T + 1, N, policy.carry_dim))
        carries[0] = policy.advance(params, policy.initial_carry(N), tape.observations[0], None, 0)
        for t in range(1, T + 1):
            parent = carries[t - 1][tape.ancestors[t]]
            carries[t] = policy.advance(params, parent, tape.observations[t], tape.actions[t], t)
        tape.carries = carries
    return tape

"""Backward sampling over a nested-filter tape.

Given a terminal slot, ancestors are redrawn one step at a time from the
smoothing weights. The weight of a candidate slot ``n`` at step ``t`` given
the already chosen future (slot ``j`` at ``t+1`` and beyond) combines

* its filtering weight ``v_t^n``;
* the log-probability of the future actions under the policy evaluated on
  the spliced history (candidate prefix + chosen future);
* the belief-transition probability with the resampling indices summed out,
  ``prod_m sum_k w_t^{nk} f(s_{t+1}^{j,m} | s_t^{n,k}, a_t^j)``;
* the slew term of the first future potential, which is the only part of the
  future potentials that depends on the candidate's previous action.

``mode="full"`` evaluates every candidate; ``mode="two-ancestor"`` runs an
independent Metropolis-Hastings step that starts at the lineage ancestor and
proposes one alternative drawn from the filtering weights, so only two
candidates are evaluated per step.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .belief import multinomial_indices
from .core import Trajectory, TrajectoryBatch
from .exceptions import ConfigError, InvalidModelError
from .nested import FilterTape
from .rng import as_generator

log = logging.getLogger(__name__)

SMOOTHING_MODES = ("full", "two-ancestor")
_CHUNK_ELEMENTS = 1 << 22


@dataclass
class SmoothingDraw:
    trajectory: Trajectory
    indices: np.ndarray  # chosen slot per step, shape (T+1,)
    log_weights: np.ndarray  # log smoothing weight of the chosen slot per step


@dataclass
class SmoothingDraws:
    """``K`` backward draws stored as index arrays into one tape."""

    tape: FilterTape
    indices: np.ndarray  # (K, T+1)
    log_weights: np.ndarray  # (K, T+1)
    n_fallbacks: int = 0
    acceptance: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self) -> int:
        return self.indices.shape[0]

    def to_batch(self) -> TrajectoryBatch:
        return self.tape.gather(self.indices)

    def __getitem__(self, k) -> SmoothingDraw:
        batch = self.tape.gather(self.indices[k:k + 1])
        return SmoothingDraw(batch[0], self.indices[k].copy(), self.log_weights[k].copy())

    def __iter__(self):
        for k in range(len(self)):
            yield self[k]


def _lse(x: np.ndarray, axis: int) -> np.ndarray:
    """Log-sum-exp that tolerates all ``-inf`` slices."""
    m = np.max(x, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - m_safe), axis=axis, keepdims=True)) + m_safe
    return np.squeeze(out, axis=axis)


def _transition_term(tape: FilterTape, model, t: int, nxt: np.ndarray, cand: np.ndarray) -> np.ndarray:
    """Marginalised belief-transition log-probability, shape ``cand.shape``.

    ``nxt`` (R,) holds the chosen slot at ``t+1`` for each row and ``cand``
    (R, C) the candidate slots at ``t``.
    """
    R, C = cand.shape
    M = tape.n_belief
    ds = tape.states.shape[-1]
    out = np.empty((R, C))
    rows_per_chunk = max(1, _CHUNK_ELEMENTS // max(1, C * M * M * ds))
    for lo in range(0, R, rows_per_chunk):
        hi = min(R, lo + rows_per_chunk)
        s_next = tape.states[t + 1, nxt[lo:hi]]  # (r, M, ds)
        a = tape.actions[t + 1, nxt[lo:hi]]  # (r, da)
        s_cur = tape.states[t, cand[lo:hi]]  # (r, C, M', ds)
        lw = tape.log_w[t, cand[lo:hi]]  # (r, C, M')
        hook = getattr(model, "belief_transition_logdensity", None)
        if hook is not None:
            per_m = hook(s_next, s_cur, lw, a)
        else:
            lf = model.transition_logdensity(
                s_next[:, None, :, None, :], s_cur[:, :, None, :, :], a[:, None, None, None, :]
            )  # (r, C, M, M')
            if np.any(np.isnan(lf)) or np.any(lf == np.inf):
                raise InvalidModelError("transition log-density returned a non-finite value")
            per_m = _lse(lw[:, :, None, :] + lf, axis=-1)  # (r, C, M)
        out[lo:hi] = np.sum(per_m, axis=-1)
    return out


def _policy_term(tape: FilterTape, policy, params, t: int, future: np.ndarray, cand: np.ndarray) -> np.ndarray:
    """Log-probability of the future actions on the spliced histories.

    ``future`` (R, T-t) holds the chosen slots at steps ``t+1..T``.
    """
    R, C = cand.shape
    T = tape.horizon
    rows = np.repeat(np.arange(R), C)
    c = cand.reshape(-1)
    if not policy.history_dependent:
        # later steps depend only on the (shared) future beliefs
        feats = None if tape.features is None else tape.features[t, c]
        a = tape.actions[t + 1, future[rows, 0]]
        return policy.log_prob(params, None, feats, a).reshape(R, C)
    carry = tape.carries[t, c]
    total = np.zeros(R * C)
    for s in range(t, T):
        slot = future[rows, s - t]  # slot at step s+1
        a = tape.actions[s + 1, slot]
        total += policy.log_prob(params, carry, None, a)
        if s + 1 < T:
            carry = policy.advance(params, carry, tape.observations[s + 1, slot], a, s + 1)
    return total.reshape(R, C)


def _slew_term(tape: FilterTape, t: int, nxt: np.ndarray, cand: np.ndarray) -> np.ndarray:
    if t == 0 or tape.slew_penalty <= 0:
        return np.zeros(cand.shape)
    a_next = tape.actions[t + 1, nxt][:, None, :]
    a_prev = tape.actions[t, cand]
    return -tape.eta * tape.slew_penalty * np.sum((a_next - a_prev) ** 2, axis=-1)


def smoothing_log_terms(tape: FilterTape, model, policy, params, t: int, future: np.ndarray,
                        cand: np.ndarray) -> np.ndarray:
    """Candidate-dependent log factors of the smoothing weight, excluding ``log v_t``."""
    nxt = future[:, 0]
    return (_transition_term(tape, model, t, nxt, cand)
            + _policy_term(tape, policy, params, t, future, cand)
            + _slew_term(tape, t, nxt, cand))


def backward_sample(tape: FilterTape, model, policy, params, n_draws: int, mode: str = "two-ancestor",
                    rng=None, mh_steps: int = 1) -> SmoothingDraws:
    """Draw ``n_draws`` trajectories from the tape by backward sampling."""
    if mode not in SMOOTHING_MODES:
        raise ConfigError(f"unknown smoothing mode {mode!r}; expected one of {SMOOTHING_MODES}")
    if tape.exact_beliefs:
        raise ConfigError("backward sampling needs particle beliefs; the tape stores exact beliefs")
    if policy.history_dependent and tape.carries is None:
        raise ConfigError("tape has no policy carries; call attach_policy_state first")
    if n_draws < 1:
        raise ConfigError("n_draws must be >= 1")
    rng = as_generator(rng)
    T, N = tape.horizon, tape.n_history
    K = int(n_draws)
    idx = np.zeros((K, T + 1), dtype=np.int64)
    logw = np.zeros((K, T + 1))
    v_T = np.exp(tape.log_v[T])
    idx[:, T] = multinomial_indices(v_T, rng, n=K)
    logw[:, T] = tape.log_v[T, idx[:, T]]
    fallbacks = 0
    accepts = np.zeros(T)
    for t in range(T - 1, -1, -1):
        future = idx[:, t + 1:]
        log_v = tape.log_v[t]
        if N == 1:
            idx[:, t] = 0
            continue
        if mode == "full":
            key = future[:, :1] if not policy.history_dependent else future
            _, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
            inv = inv.reshape(-1)
            uniq_future = future[first]
            cand = np.broadcast_to(np.arange(N), (len(uniq_future), N))
            terms = smoothing_log_terms(tape, model, policy, params, t, uniq_future, cand)
            lw = terms + log_v[None, :]
            total = _lse(lw, axis=1)[:, None]
            dead = ~np.isfinite(total[:, 0])
            norm = np.where(dead[:, None], -np.inf, lw - np.where(dead[:, None], 0.0, total))
            choice = multinomial_indices(np.exp(norm[inv]), rng, n=1)[:, 0]
            lineage = tape.ancestors[t + 1, idx[:, t + 1]]
            dead_k = dead[inv]
            if np.any(dead_k):
                fallbacks += int(np.sum(dead_k))
                log.warning("all smoothing weights vanished at step %d for %d draws; using lineage ancestors",
                            t, int(np.sum(dead_k)))
                choice = np.where(dead_k, lineage, choice)
            idx[:, t] = choice
            logw[:, t] = norm[inv, choice]
        else:
            cur = tape.ancestors[t + 1, idx[:, t + 1]]
            cur_h = None
            n_acc = 0
            for _ in range(int(mh_steps)):
                prop = multinomial_indices(np.exp(log_v), rng, n=K)
                cand = np.stack([cur, prop], axis=1)
                h = smoothing_log_terms(tape, model, policy, params, t, future, cand)
                cur_h = h[:, 0]
                with np.errstate(invalid="ignore"):
                    log_ratio = h[:, 1] - h[:, 0]
                log_ratio = np.where(np.isnan(log_ratio), -np.inf, log_ratio)
                accept = np.log(rng.random(K)) < log_ratio
                both_dead = np.isneginf(h[:, 0]) & np.isneginf(h[:, 1])
                if np.any(both_dead):
                    fallbacks += int(np.sum(both_dead))
                    log.warning("smoothing weights vanished at step %d for %d draws; keeping lineage ancestors",
                                t, int(np.sum(both_dead)))
                cur = np.where(accept, prop, cur)
                cur_h = np.where(accept, h[:, 1], h[:, 0])
                n_acc += int(np.sum(accept))
            accepts[t] = n_acc / (K * int(mh_steps))
            idx[:, t] = cur
            logw[:, t] = log_v[cur] + cur_h
    return SmoothingDraws(tape, idx, logw, n_fallbacks=fallbacks, acceptance=accepts)


def lineage_trace(tape: FilterTape) -> List[Trajectory]:
    """Plain genealogical trajectories of the ``N`` terminal slots."""
    batch = tape.gather(tape.lineage_indices())
    return [batch[n] for n in range(len(batch))]


@dataclass
class DegeneracyReport:
    lineage_unique: np.ndarray  # distinct slots per step among lineage trajectories
    backward_unique: np.ndarray  # distinct slots per step among backward draws
    n_lineage: int
    n_draws: int

    def as_dict(self) -> dict:
        return {
            "lineage_unique": self.lineage_unique.tolist(),
            "backward_unique": self.backward_unique.tolist(),
            "n_lineage": self.n_lineage,
            "n_draws": self.n_draws,
        }


def _unique_per_step(indices: np.ndarray) -> np.ndarray:
    return np.array([len(np.unique(indices[:, t])) for t in range(indices.shape[1])])


def degeneracy_report(tape: FilterTape, draws: SmoothingDraws) -> DegeneracyReport:
    lineage = tape.lineage_indices()
    return DegeneracyReport(_unique_per_step(lineage), _unique_per_step(draws.indices),
                            len(lineage), len(draws))

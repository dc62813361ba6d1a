"""Policy-gradient estimators and the parameter update.

``p3o_gradient`` averages trajectory scores over samples from the tilted
history posterior. Because the exact gradient of the risk-sensitive objective
is that average divided by ``eta``, the estimator is only proportional to it
unless ``eta`` is passed; during training the factor is absorbed into the
learning rate.

``reinforce_gradient`` weights per-step scores by the reward-to-go of
untilted rollouts.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import TrajectoryBatch
from .exceptions import ConfigError, NoSamplesError

BASELINES = ("none", "mean", "loo")


@dataclass
class GradientEstimate:
    vector: np.ndarray
    n_samples: int
    ess: float
    score_norms: Optional[np.ndarray] = None

    @property
    def finite(self) -> bool:
        return bool(np.all(np.isfinite(self.vector)))


def _as_batch(draws) -> TrajectoryBatch:
    if isinstance(draws, TrajectoryBatch):
        return draws
    if hasattr(draws, "to_batch"):
        return draws.to_batch()
    raise TypeError(f"expected a TrajectoryBatch or smoothing draws, got {type(draws).__name__}")


def _per_sample_norms(policy, params, batch, step_weights):
    norms = np.empty(len(batch))
    feats = batch.policy_inputs
    for k in range(len(batch)):
        f = None if feats is None else feats[k:k + 1]
        _, g = policy.score(params, batch.observations[k:k + 1], batch.actions[k:k + 1], f,
                            step_weights=step_weights[k:k + 1])
        norms[k] = np.linalg.norm(g)
    return norms


def p3o_gradient(draws, params, policy, eta: Optional[float] = None,
                 per_sample_norms: bool = False) -> GradientEstimate:
    """Self-normalised average of trajectory scores.

    Weighted batches (terminal particles) use their normalised weights,
    unweighted batches (backward draws) are averaged uniformly.
    """
    batch = _as_batch(draws)
    if len(batch) == 0:
        raise NoSamplesError("cannot estimate a gradient from zero trajectories")
    w = batch.normalized_weights()
    sw = np.repeat(w[:, None], batch.horizon, axis=1)
    _, g = policy.score(params, batch.observations, batch.actions, batch.policy_inputs, step_weights=sw)
    if eta is not None:
        if not eta > 0:
            raise ConfigError("eta must be positive")
        g = g / eta
    norms = _per_sample_norms(policy, params, batch, np.ones_like(sw)) if per_sample_norms else None
    return GradientEstimate(g, len(batch), float(1.0 / np.sum(w * w)), norms)


def reward_to_go(rewards: np.ndarray) -> np.ndarray:
    """``out[:, t] = sum_{k >= t} rewards[:, k]``; column ``t`` pairs with action ``a_t``."""
    return np.cumsum(np.asarray(rewards)[:, ::-1], axis=1)[:, ::-1]


def reinforce_gradient(rollouts: TrajectoryBatch, params, policy, baseline: str = "none",
                       per_sample_norms: bool = False) -> GradientEstimate:
    """Reward-to-go weighted score average over untilted rollouts.

    ``baseline='mean'`` subtracts the per-step batch mean of the reward-to-go,
    ``'loo'`` the leave-one-out mean (which keeps the estimate unbiased).
    """
    if baseline not in BASELINES:
        raise ConfigError(f"unknown baseline {baseline!r}; expected one of {BASELINES}")
    batch = _as_batch(rollouts)
    K = len(batch)
    if K == 0:
        raise NoSamplesError("cannot estimate a gradient from zero rollouts")
    if batch.rewards is None:
        raise ConfigError("REINFORCE needs per-step reward estimates in the batch")
    rtg = reward_to_go(batch.rewards)
    if baseline == "mean":
        rtg = rtg - rtg.mean(axis=0, keepdims=True)
    elif baseline == "loo":
        if K < 2:
            raise ConfigError("leave-one-out baseline needs at least two rollouts")
        total = rtg.sum(axis=0, keepdims=True)
        rtg = rtg - (total - rtg) / (K - 1)
    sw = rtg / K
    _, g = policy.score(params, batch.observations, batch.actions, batch.policy_inputs, step_weights=sw)
    norms = _per_sample_norms(policy, params, batch, rtg) if per_sample_norms else None
    return GradientEstimate(g, K, float(K), norms)


@dataclass
class OptimizerState:
    """Adaptive-moment (or plain) ascent state.

    ``schedule`` is ``'constant'`` or ``'inverse'`` (``lr / (1 + decay * step)``).
    """

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    method: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: Optional[float] = 10.0
    schedule: str = "constant"
    decay: float = 0.0
    n_skipped: int = 0
    n_clipped: int = 0

    @classmethod
    def create(cls, n_params: int, **kwargs) -> "OptimizerState":
        state = cls(np.zeros(n_params), np.zeros(n_params), **kwargs)
        if state.method not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {state.method!r}")
        if state.schedule not in ("constant", "inverse"):
            raise ConfigError(f"unknown schedule {state.schedule!r}")
        if not state.lr > 0:
            raise ConfigError("learning rate must be positive")
        return state

    def step_size(self) -> float:
        if self.schedule == "inverse":
            return self.lr / (1.0 + self.decay * self.step)
        return self.lr


def apply_update(params, estimate, state: OptimizerState):
    """One ascent step; returns ``(new_params, state)``.

    Non-finite estimates leave the parameters untouched and increment
    ``state.n_skipped``. The input arrays are never modified.
    """
    params = np.asarray(params, dtype=float)
    g = np.asarray(getattr(estimate, "vector", estimate), dtype=float)
    if g.shape != params.shape or state.m.shape != params.shape:
        raise ConfigError("gradient, parameter and optimizer shapes differ")
    if not np.all(np.isfinite(g)):
        state.n_skipped += 1
        return params.copy(), state
    if state.clip_norm is not None:
        norm = float(np.linalg.norm(g))
        if norm > state.clip_norm:
            g = g * (state.clip_norm / norm)
            state.n_clipped += 1
    alpha = state.step_size()
    state.step += 1
    if state.method == "sgd":
        return params + alpha * g, state
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    return params + alpha * m_hat / (np.sqrt(v_hat) + state.eps), state

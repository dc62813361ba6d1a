"""POMDP model contract and trajectory containers.

All model methods are vectorised: states carry a trailing ``state_dim`` axis
and any number of leading batch axes, and actions/observations broadcast
against them the same way. Densities are exposed in the log domain only.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import ConfigError


class PomdpModel:
    """Base class for a finite-horizon POMDP with explicit densities.

    Subclasses set ``state_dim``, ``action_dim``, ``obs_dim``, ``horizon`` and
    ``r_max`` and implement the six model methods. ``reward(s_next, a_prev, t)``
    follows the transition-based convention: it scores the state reached at
    step ``t`` together with the action that led there.
    """

    state_dim: int
    action_dim: int
    obs_dim: int
    horizon: int
    r_max: float
    discrete: bool = False
    # per-dimension bound for tanh-squashed policies; None means unbounded
    action_bound: Optional[np.ndarray] = None
    name: str = "pomdp"

    def sample_initial(self, rng: np.random.Generator, size=()) -> np.ndarray:
        raise NotImplementedError

    def initial_logdensity(self, s: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def transition_sample(self, s, a, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def transition_logdensity(self, s_next, s, a) -> np.ndarray:
        raise NotImplementedError

    def observation_sample(self, s, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def observation_logdensity(self, z, s) -> np.ndarray:
        raise NotImplementedError

    def reward(self, s_next, a_prev, t) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> dict:
        return {
            "name": self.name,
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "obs_dim": self.obs_dim,
            "horizon": self.horizon,
            "r_max": float(self.r_max),
        }


def check_model(model) -> PomdpModel:
    for attr in ("state_dim", "action_dim", "obs_dim", "horizon", "r_max"):
        if not hasattr(model, attr):
            raise ConfigError(f"model is missing required attribute {attr!r}")
    if int(model.horizon) < 1:
        raise ConfigError("model horizon must be >= 1")
    for attr in ("state_dim", "action_dim", "obs_dim"):
        if int(getattr(model, attr)) < 1:
            raise ConfigError(f"{attr} must be positive")
    return model


@dataclass
class Trajectory:
    """One observation-action history ``z_{0:T}``, ``a_{0:T-1}``."""

    observations: np.ndarray
    actions: np.ndarray

    def __post_init__(self):
        self.observations = np.atleast_2d(np.asarray(self.observations, dtype=float))
        self.actions = np.asarray(self.actions, dtype=float)
        if self.actions.ndim == 1:
            self.actions = self.actions.reshape(len(self.actions), -1) if self.actions.size else (
                self.actions.reshape(0, 1)
            )
        if len(self.observations) != len(self.actions) + 1:
            raise ValueError(
                f"expected len(observations) == len(actions) + 1, got "
                f"{len(self.observations)} and {len(self.actions)}"
            )

    @property
    def horizon(self) -> int:
        return len(self.actions)


@dataclass
class TrajectoryBatch:
    """``K`` equal-length histories stored as arrays.

    ``weights`` are normalised importance weights (``None`` means uniform);
    ``rewards[:, t-1]`` holds the belief-expected reward of step ``t``;
    ``policy_inputs[:, t]`` holds belief features for belief-mode policies.
    """

    observations: np.ndarray  # (K, T+1, obs_dim)
    actions: np.ndarray  # (K, T, action_dim)
    weights: Optional[np.ndarray] = None
    rewards: Optional[np.ndarray] = None
    policy_inputs: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=float)
        self.actions = np.asarray(self.actions, dtype=float)
        if self.observations.ndim != 3 or self.actions.ndim != 3:
            raise ValueError("observations and actions must be 3-D (K, steps, dim)")
        if self.observations.shape[0] != self.actions.shape[0]:
            raise ValueError("batch sizes of observations and actions differ")
        if self.observations.shape[1] != self.actions.shape[1] + 1:
            raise ValueError("need one more observation than actions per trajectory")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float)

    def __len__(self) -> int:
        return self.observations.shape[0]

    @property
    def horizon(self) -> int:
        return self.actions.shape[1]

    def __getitem__(self, k) -> Trajectory:
        return Trajectory(self.observations[k], self.actions[k])

    def subset(self, idx) -> "TrajectoryBatch":
        idx = np.asarray(idx)
        pick = lambda x: None if x is None else x[idx]
        return TrajectoryBatch(
            self.observations[idx],
            self.actions[idx],
            weights=pick(self.weights),
            rewards=pick(self.rewards),
            policy_inputs=pick(self.policy_inputs),
            meta=dict(self.meta),
        )

    def normalized_weights(self) -> np.ndarray:
        k = len(self)
        if self.weights is None:
            return np.full(k, 1.0 / k)
        w = np.asarray(self.weights, dtype=float)
        total = w.sum()
        if not np.isfinite(total) or total <= 0:
            raise ValueError("trajectory weights must have a positive finite sum")
        return w / total

    @classmethod
    def from_trajectories(cls, trajectories, **kwargs) -> "TrajectoryBatch":
        obs = np.stack([tr.observations for tr in trajectories])
        act = np.stack([tr.actions for tr in trajectories])
        return cls(obs, act, **kwargs)

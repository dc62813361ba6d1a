"""Bootstrap particle filter over latent states.

A :class:`BeliefParticles` value may carry leading batch axes so that the
nested sampler can run one private filter per history particle with a single
vectorised call. Weights live in the log domain and are kept normalised.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .exceptions import BeliefCollapseError, ModelDivergenceError

RESAMPLING_SCHEMES = ("multinomial", "systematic")


@dataclass
class BeliefParticles:
    states: np.ndarray  # (..., M, state_dim)
    log_weights: np.ndarray  # (..., M)
    log_norm_increment: np.ndarray  # (...)
    collapsed: Optional[np.ndarray] = None  # (...) bool

    def __post_init__(self):
        if self.collapsed is None:
            self.collapsed = np.zeros(self.log_weights.shape[:-1], dtype=bool)

    @property
    def num_particles(self) -> int:
        return self.log_weights.shape[-1]

    @property
    def batch_shape(self) -> tuple:
        return self.log_weights.shape[:-1]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def take(self, index) -> "BeliefParticles":
        """Select along the (single) leading batch axis."""
        return BeliefParticles(
            self.states[index],
            self.log_weights[index],
            np.asarray(self.log_norm_increment)[index],
            self.collapsed[index],
        )


def normalize_log_weights(log_w: np.ndarray):
    """Return (normalised log-weights, log of the total) along the last axis."""
    with np.errstate(invalid="ignore"):
        total = logsumexp(log_w, axis=-1, keepdims=True)
    dead = ~np.isfinite(total)
    safe_total = np.where(dead, 0.0, total)
    out = log_w - safe_total
    out = np.where(dead, -np.inf, out)
    return out, np.squeeze(total, -1)


def effective_sample_size(weights: np.ndarray) -> np.ndarray:
    """``1 / sum(w^2)`` along the last axis for normalised weights."""
    w = np.asarray(weights, dtype=float)
    return 1.0 / np.sum(w * w, axis=-1)


def log_effective_sample_size(log_weights: np.ndarray) -> np.ndarray:
    return -logsumexp(2.0 * np.asarray(log_weights), axis=-1)


def _searchsorted_rows(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Row-wise ``searchsorted(side='right')``: first k with cdf[k] > u."""
    m = cdf.shape[-1]
    if cdf.ndim == 1:
        return np.minimum(np.searchsorted(cdf, u, side="right"), m - 1)
    rows = cdf.reshape(-1, m)
    us = u.reshape(rows.shape[0], -1)
    offsets = np.arange(rows.shape[0], dtype=float)[:, None] * 2.0
    # rows are scaled to end at 1, so an offset of 2 per row keeps them disjoint
    flat = np.searchsorted((rows + offsets).ravel(), (us + offsets).ravel(), side="right")
    idx = flat.reshape(us.shape) - np.arange(rows.shape[0])[:, None] * m
    return np.minimum(idx, m - 1).reshape(u.shape)


def _cdf(weights: np.ndarray) -> np.ndarray:
    c = np.cumsum(weights, axis=-1)
    total = c[..., -1:]
    return c / np.where(total > 0, total, 1.0)


def multinomial_indices(weights: np.ndarray, rng: np.random.Generator, n: Optional[int] = None):
    """Independent categorical draws by inverse CDF with strict inequality."""
    w = np.asarray(weights, dtype=float)
    n = w.shape[-1] if n is None else int(n)
    u = rng.random(w.shape[:-1] + (n,))
    return _searchsorted_rows(_cdf(w), u)


def systematic_indices(weights: np.ndarray, rng: np.random.Generator, n: Optional[int] = None):
    w = np.asarray(weights, dtype=float)
    n = w.shape[-1] if n is None else int(n)
    u0 = rng.random(w.shape[:-1] + (1,))
    u = (np.arange(n) + u0) / n
    return _searchsorted_rows(_cdf(w), u)


def resample_indices(weights, rng, scheme: str = "multinomial", n: Optional[int] = None):
    if scheme == "multinomial":
        return multinomial_indices(weights, rng, n)
    if scheme == "systematic":
        return systematic_indices(weights, rng, n)
    raise ValueError(f"unknown resampling scheme {scheme!r}; expected one of {RESAMPLING_SCHEMES}")


def _check_finite_states(states: np.ndarray):
    bad = ~np.all(np.isfinite(states), axis=-1)
    if np.any(bad):
        first = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ModelDivergenceError(f"non-finite state sampled at particle index {first}", index=first)


def init_belief(model, num_particles: int, rng: np.random.Generator, batch_shape=()) -> BeliefParticles:
    """Draw ``num_particles`` i.i.d. initial states with uniform weights."""
    if num_particles < 1:
        raise ValueError("num_particles must be >= 1")
    batch_shape = tuple(np.atleast_1d(batch_shape)) if batch_shape != () else ()
    states = model.sample_initial(rng, size=batch_shape + (num_particles,))
    log_w = np.full(batch_shape + (num_particles,), -np.log(num_particles))
    return BeliefParticles(states, log_w, np.zeros(batch_shape))


def propagate(belief: BeliefParticles, action, model, rng: np.random.Generator) -> BeliefParticles:
    """Move every particle through the transition kernel; weights are unchanged."""
    a = np.asarray(action, dtype=float)
    a = np.expand_dims(a, axis=-2)  # broadcast over the particle axis
    states = model.transition_sample(belief.states, a, rng)
    _check_finite_states(states)
    return replace(belief, states=states)


def reweight(belief: BeliefParticles, observation, model, strict: bool = True) -> BeliefParticles:
    """Multiply weights by the observation likelihood and renormalise.

    With ``strict=False`` collapsed filters (all likelihoods zero) are flagged
    in ``collapsed`` instead of raising.
    """
    z = np.expand_dims(np.asarray(observation, dtype=float), axis=-2)
    incr = model.observation_logdensity(z, belief.states)
    log_w = belief.log_weights + incr
    old_total = logsumexp(belief.log_weights, axis=-1)
    new_log_w, new_total = normalize_log_weights(log_w)
    collapsed = ~np.isfinite(new_total) | belief.collapsed
    if strict and np.any(collapsed):
        where = np.argwhere(np.atleast_1d(collapsed))
        raise BeliefCollapseError(
            "all belief particles have zero observation likelihood",
            index=tuple(int(i) for i in where[0]) if len(where) else None,
        )
    with np.errstate(invalid="ignore"):
        log_norm_increment = np.where(collapsed, -np.inf, new_total - old_total)
    return BeliefParticles(belief.states, new_log_w, log_norm_increment, collapsed)


def expected_reward(belief: BeliefParticles, action_prev, t: int, model) -> np.ndarray:
    """Belief-weighted reward ``sum_m w^m R_t(s^m, a_prev)``."""
    a = np.expand_dims(np.asarray(action_prev, dtype=float), axis=-2)
    r = np.broadcast_to(model.reward(belief.states, a, t), belief.log_weights.shape)
    w = np.exp(belief.log_weights)
    out = np.sum(np.where(w > 0, w * r, 0.0), axis=-1)
    return np.where(belief.collapsed, np.nan, out)


def sample_predictive_observation(belief: BeliefParticles, model, rng: np.random.Generator) -> np.ndarray:
    """Draw a mixture component from the weights, then an observation from it."""
    idx = multinomial_indices(np.exp(belief.log_weights), rng, n=1)  # (..., 1)
    chosen = np.take_along_axis(belief.states, idx[..., None], axis=-2)[..., 0, :]
    return model.observation_sample(chosen, rng)


def resample_belief(belief: BeliefParticles, rng: np.random.Generator, scheme: str = "multinomial"):
    """Resample particles and reset weights to ``1/M``.

    Returns the new belief and the ancestor indices that produced it.
    """
    m = belief.num_particles
    idx = resample_indices(np.exp(belief.log_weights), rng, scheme=scheme)
    states = np.take_along_axis(belief.states, idx[..., None], axis=-2)
    log_w = np.full(belief.log_weights.shape, -np.log(m))
    return (
        BeliefParticles(states, log_w, np.zeros(belief.batch_shape), belief.collapsed.copy()),
        idx,
    )


def weighted_mean(belief: BeliefParticles) -> np.ndarray:
    w = np.exp(belief.log_weights)[..., None]
    return np.sum(w * belief.states, axis=-2)


def weighted_covariance(belief: BeliefParticles) -> np.ndarray:
    w = np.exp(belief.log_weights)[..., None, None]
    d = belief.states - weighted_mean(belief)[..., None, :]
    return np.sum(w * d[..., :, None] * d[..., None, :], axis=-3)


class BootstrapBeliefFilter:
    """Particle belief tracker used inside the nested sampler.

    Parameters
    ----------
    num_particles : int
        Belief particles per history particle.
    resampling : {'multinomial', 'systematic'}
    """

    exact = False

    def __init__(self, num_particles: int = 32, resampling: str = "multinomial"):
        if resampling not in RESAMPLING_SCHEMES:
            raise ValueError(f"unknown resampling scheme {resampling!r}")
        self.num_particles = int(num_particles)
        self.resampling = resampling

    def init(self, model, batch: int, rng) -> BeliefParticles:
        return init_belief(model, self.num_particles, rng, batch_shape=(batch,))

    def propagate(self, belief, actions, model, rng):
        return propagate(belief, actions, model, rng)

    def reweight(self, belief, observations, model):
        return reweight(belief, observations, model, strict=False)

    def expected_reward(self, belief, actions_prev, t, model):
        return expected_reward(belief, actions_prev, t, model)

    def sample_predictive(self, belief, model, rng):
        return sample_predictive_observation(belief, model, rng)

    def resample(self, belief, rng):
        return resample_belief(belief, rng, scheme=self.resampling)

    def __repr__(self):
        return f"BootstrapBeliefFilter(num_particles={self.num_particles}, resampling={self.resampling!r})"

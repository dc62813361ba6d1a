"""Stochastic policies with explicit parameter vectors and exact scores.

Three architectures share one calling convention:

* :class:`TabularSoftmaxPolicy` -- one softmax per discrete history node,
  used on the enumerable oracle POMDP.
* :class:`BeliefPolicy` -- permutation-invariant belief features (weighted
  moments and log-ESS) fed to a dense decoder.
* :class:`RecurrentPolicy` -- dense encoder with layer norm, two stacked
  gated recurrent cells and a dense decoder over ``(z_t, a_{t-1})`` inputs.

A policy never holds parameters. Each call receives the flat vector
``params``; ``carry`` is a ``(batch, carry_dim)`` array summarising the
history consumed so far and ``features`` a ``(batch, feature_dim)`` array of
belief statistics (ignored by history policies).
"""
from __future__ import annotations

import json
from typing import Optional, Sequence

import numpy as np
from scipy.special import log_softmax

from . import nn
from .belief import log_effective_sample_size
from .exceptions import ConfigError, NumericOverflowError

LOG_2PI = float(np.log(2.0 * np.pi))
SQUASH_EPS = 1e-12
MEAN_LIMIT = 5.0


def squash_log_jacobian(u: np.ndarray, bound: np.ndarray) -> np.ndarray:
    """``log |d(bound * tanh(u)) / du|`` summed over the last axis."""
    log1m_tanh2 = 2.0 * (np.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))
    return np.sum(np.log(bound) + log1m_tanh2, axis=-1)


def unsquash(actions: np.ndarray, bound: np.ndarray):
    """Invert the squashing; returns (u, clamped-mask) with an epsilon inset."""
    y = actions / bound
    clamped = np.any(np.abs(y) >= 1.0 - SQUASH_EPS, axis=-1)
    y = np.clip(y, -1.0 + SQUASH_EPS, 1.0 - SQUASH_EPS)
    return np.arctanh(y), clamped


class GaussianHead:
    """Diagonal Gaussian in pre-squash space with an input-independent log-std.

    ``bound=None`` means actions are the raw Gaussian sample. With a bound the
    network output is soft-limited to ``MEAN_LIMIT * tanh(raw / MEAN_LIMIT)``
    so that samples stay where the squashing can be inverted; otherwise a
    saturated mean makes the reconstructed pre-squash value, and hence the
    score, biased.
    """

    def __init__(self, action_dim: int, bound: Optional[Sequence[float]] = None):
        self.action_dim = int(action_dim)
        self.bound = None if bound is None else np.broadcast_to(
            np.asarray(bound, dtype=float), (self.action_dim,)
        ).copy()

    def center(self, raw):
        if self.bound is None:
            return raw
        return MEAN_LIMIT * np.tanh(raw / MEAN_LIMIT)

    def _u(self, actions):
        if self.bound is None:
            return actions, np.zeros(actions.shape[:-1], dtype=bool)
        return unsquash(actions, self.bound)

    def mode(self, raw):
        mean = self.center(raw)
        return mean if self.bound is None else self.bound * np.tanh(mean)

    def sample(self, raw, log_std, rng):
        mean = self.center(raw)
        u = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
        actions = u if self.bound is None else self.bound * np.tanh(u)
        return actions, self._log_prob_u(u, mean, log_std)

    def _log_prob_u(self, u, mean, log_std):
        std = np.exp(log_std)
        lp = np.sum(-0.5 * ((u - mean) / std) ** 2 - log_std - 0.5 * LOG_2PI, axis=-1)
        if self.bound is not None:
            lp = lp - squash_log_jacobian(u, self.bound)
        return lp

    def log_prob(self, actions, raw, log_std):
        u, _ = self._u(actions)
        return self._log_prob_u(u, self.center(raw), log_std)

    def grads(self, actions, raw, log_std):
        """d log p / d raw and d log p / d log_std (per sample)."""
        u, _ = self._u(actions)
        mean = self.center(raw)
        std2 = np.exp(2.0 * log_std)
        diff = u - mean
        d_mean = diff / std2
        if self.bound is not None:
            d_mean = d_mean * (1.0 - (mean / MEAN_LIMIT) ** 2)
        return d_mean, diff * diff / std2 - 1.0


class Policy:
    """Common interface; see module docstring."""

    input_mode = "history"
    history_dependent = True
    discrete = False
    carry_dim = 0
    feature_dim = 0

    @property
    def n_params(self) -> int:
        return self.layout.size

    def init_params(self, rng) -> np.ndarray:
        raise NotImplementedError

    def initial_carry(self, batch: int) -> np.ndarray:
        return np.zeros((batch, self.carry_dim))

    def advance(self, params, carry, obs, prev_action, t: int) -> np.ndarray:
        return carry

    def features(self, states, log_weights) -> Optional[np.ndarray]:
        return None

    def sample(self, params, carry, features, rng):
        raise NotImplementedError

    def log_prob(self, params, carry, features, actions) -> np.ndarray:
        raise NotImplementedError

    def mode(self, params, carry, features) -> np.ndarray:
        """Most likely action (squashed mean or arg-max); used for deterministic evaluation."""
        raise NotImplementedError

    def score(self, params, observations, actions, features=None, step_weights=None):
        """Return ``(log_probs (K, T), sum_{k,t} step_weights[k,t] * grad log pi)``."""
        raise NotImplementedError

    def descriptor(self) -> dict:
        raise NotImplementedError

    def check_params(self, params) -> np.ndarray:
        params = np.asarray(params, dtype=float)
        if params.shape != (self.n_params,):
            raise ConfigError(f"expected {self.n_params} parameters, got shape {params.shape}")
        if not np.all(np.isfinite(params)):
            raise ConfigError("policy parameters must be finite")
        return params

    def log_prob_sequence(self, params, observations, actions, features=None) -> np.ndarray:
        """Per-step log-probabilities for a batch of trajectories, shape (K, T)."""
        return self.score(params, observations, actions, features, step_weights=None)[0]


def _step_weights(step_weights, K, T):
    if step_weights is None:
        return None
    sw = np.asarray(step_weights, dtype=float)
    if sw.ndim == 1:
        sw = np.repeat(sw[:, None], T, axis=1)
    return np.broadcast_to(sw, (K, T))


class TabularSoftmaxPolicy(Policy):
    """Softmax over actions for every observation-action history node.

    The carry is ``(t, code)`` where ``code`` enumerates histories of length
    ``t`` in mixed radix ``(z_0, a_0, z_1, ..., z_t)``.
    """

    discrete = True
    carry_dim = 2

    def __init__(self, n_obs: int, n_actions: int, horizon: int):
        self.n_obs = int(n_obs)
        self.n_actions = int(n_actions)
        self.horizon = int(horizon)
        self.action_dim = 1
        sizes = [self.n_obs * (self.n_obs * self.n_actions) ** t for t in range(self.horizon)]
        self.level_offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self.n_nodes = int(self.level_offsets[-1])
        self.layout = nn.ParamLayout()
        self.layout.add("logits", (self.n_nodes, self.n_actions))

    def init_params(self, rng=None) -> np.ndarray:
        return np.zeros(self.n_params)

    def initial_carry(self, batch):
        return np.zeros((batch, 2))

    def advance(self, params, carry, obs, prev_action, t):
        z = np.asarray(obs, dtype=float)[..., 0].astype(np.int64)
        if t == 0:
            code = z
        else:
            a = np.asarray(prev_action, dtype=float)[..., 0].astype(np.int64)
            code = (carry[:, 1].astype(np.int64) * self.n_actions + a) * self.n_obs + z
        return np.stack([np.full(code.shape, float(t)), code.astype(float)], axis=1)

    def node(self, carry) -> np.ndarray:
        t = carry[:, 0].astype(np.int64)
        if np.any(t >= self.horizon):
            raise ValueError("history node beyond the policy horizon")
        return self.level_offsets[t] + carry[:, 1].astype(np.int64)

    def action_log_probs(self, params, carry, features=None) -> np.ndarray:
        logits = self.layout.unflatten(params)["logits"]
        return log_softmax(logits[self.node(carry)], axis=-1)

    def sample(self, params, carry, features, rng):
        lp = self.action_log_probs(params, carry)
        p = np.exp(lp)
        c = np.cumsum(p, axis=-1)
        u = rng.random((len(p), 1)) * c[:, -1:]
        a = np.minimum(np.sum(c <= u, axis=-1), self.n_actions - 1)
        return a[:, None].astype(float), lp[np.arange(len(a)), a]

    def mode(self, params, carry, features):
        return np.argmax(self.action_log_probs(params, carry), axis=-1)[:, None].astype(float)

    def log_prob(self, params, carry, features, actions):
        lp = self.action_log_probs(params, carry)
        a = np.asarray(actions)[..., 0].astype(np.int64)
        return lp[np.arange(len(a)), a]

    def carries(self, observations, actions):
        """Carries before each action, shape (K, T, 2)."""
        K, T = actions.shape[:2]
        out = np.empty((K, T, 2))
        c = self.initial_carry(K)
        for t in range(T):
            c = self.advance(None, c, observations[:, t], actions[:, t - 1] if t > 0 else None, t)
            out[:, t] = c
        return out

    def score(self, params, observations, actions, features=None, step_weights=None):
        observations = np.asarray(observations, dtype=float)
        actions = np.asarray(actions, dtype=float)
        K, T = actions.shape[:2]
        logits = self.layout.unflatten(params)["logits"]
        grad = np.zeros(self.n_params)
        g = grad.reshape(self.n_nodes, self.n_actions)
        logp = np.zeros((K, T))
        if T == 0 or K == 0:
            return logp, grad
        carries = self.carries(observations, actions)
        sw = _step_weights(step_weights, K, T)
        for t in range(T):
            nodes = self.node(carries[:, t])
            lp = log_softmax(logits[nodes], axis=-1)
            a = actions[:, t, 0].astype(np.int64)
            logp[:, t] = lp[np.arange(K), a]
            if sw is not None:
                d = -np.exp(lp) * sw[:, t:t + 1]
                d[np.arange(K), a] += sw[:, t]
                np.add.at(g, nodes, d)
        return logp, grad

    def descriptor(self):
        return {
            "kind": "tabular",
            "n_obs": self.n_obs,
            "n_actions": self.n_actions,
            "horizon": self.horizon,
        }


def belief_feature_dim(state_dim: int) -> int:
    return state_dim + state_dim * (state_dim + 1) // 2 + 1


def belief_features(states: np.ndarray, log_weights: np.ndarray) -> np.ndarray:
    """Weighted mean, upper-triangular weighted covariance and log-ESS.

    Every statistic is a weighted sum over particles, so the result does not
    depend on particle order.
    """
    states = np.asarray(states, dtype=float)
    w = np.exp(np.asarray(log_weights, dtype=float))
    mean = np.einsum("...m,...md->...d", w, states)
    d = states - mean[..., None, :]
    cov = np.einsum("...m,...mi,...mj->...ij", w, d, d)
    iu = np.triu_indices(states.shape[-1])
    log_ess = log_effective_sample_size(log_weights)[..., None]
    return np.concatenate([mean, cov[..., iu[0], iu[1]], log_ess], axis=-1)


class _MLPDecoder:
    """Dense ReLU stack ending in a linear layer of size ``action_dim``."""

    def __init__(self, layout, prefix, in_dim, hidden, out_dim):
        self.names = []
        dims = [in_dim] + list(hidden) + [out_dim]
        for i in range(len(dims) - 1):
            layout.add(f"{prefix}W{i}", (dims[i], dims[i + 1]))
            layout.add(f"{prefix}b{i}", (dims[i + 1],))
            self.names.append((f"{prefix}W{i}", f"{prefix}b{i}"))
        self.dims = dims

    def init(self, rng, p, out_scale=0.1):
        last = len(self.names) - 1
        for i, (wn, bn) in enumerate(self.names):
            p[wn][...] = nn.uniform_fan_in(rng, self.dims[i], self.dims[i + 1],
                                           scale=out_scale if i == last else 1.0)
            p[bn][...] = 0.0

    def forward(self, p, x):
        cache = [x]
        last = len(self.names) - 1
        for i, (wn, bn) in enumerate(self.names):
            x = nn.dense(x, p[wn], p[bn])
            if i < last:
                x = nn.relu(x)
            cache.append(x)
        return x, cache

    def backward(self, p, g, cache, dy):
        last = len(self.names) - 1
        for i in range(last, -1, -1):
            wn, bn = self.names[i]
            if i < last:
                dy = nn.relu_backward(dy, cache[i + 1])
            dy = nn.dense_backward(dy, cache[i], p[wn], g[wn], g[bn])
        return dy


def symlog(x):
    """``sign(x) * log(1 + |x|)``: compresses large belief moments before the decoder."""
    return np.sign(x) * np.log1p(np.abs(x))


INPUT_TRANSFORMS = {"symlog": symlog, "none": lambda x: x}


class BeliefPolicy(Policy):
    """Belief-dependent Gaussian policy over permutation-invariant moments.

    ``input_transform`` is a fixed elementwise map applied to the features
    (``"symlog"`` by default); it has no parameters.
    """

    input_mode = "belief"
    history_dependent = False

    def __init__(self, state_dim: int, action_dim: int, hidden=(256, 256),
                 action_bound=None, init_log_std=0.0, input_transform: str = "symlog"):
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.feature_dim = belief_feature_dim(self.state_dim)
        self.head = GaussianHead(self.action_dim, action_bound)
        self.init_log_std = float(init_log_std)
        if input_transform not in INPUT_TRANSFORMS:
            raise ConfigError(f"unknown input transform {input_transform!r}")
        self.input_transform = input_transform
        self.layout = nn.ParamLayout()
        self.decoder = _MLPDecoder(self.layout, "dec_", self.feature_dim, self.hidden, self.action_dim)
        self.layout.add("log_std", (self.action_dim,))

    def init_params(self, rng) -> np.ndarray:
        flat, p = self.layout.zeros()
        self.decoder.init(rng, p)
        p["log_std"][...] = self.init_log_std
        return flat

    def features(self, states, log_weights):
        return belief_features(states, log_weights)

    def _mean(self, params, features):
        p = self.layout.unflatten(params)
        x = INPUT_TRANSFORMS[self.input_transform](np.asarray(features, dtype=float))
        mean, cache = self.decoder.forward(p, x)
        return p, mean, cache

    def sample(self, params, carry, features, rng):
        p, mean, _ = self._mean(params, features)
        return self.head.sample(mean, np.broadcast_to(p["log_std"], mean.shape), rng)

    def mode(self, params, carry, features):
        _, mean, _ = self._mean(params, features)
        return self.head.mode(mean)

    def log_prob(self, params, carry, features, actions):
        p, mean, _ = self._mean(params, features)
        return self.head.log_prob(np.asarray(actions, dtype=float), mean, np.broadcast_to(p["log_std"], mean.shape))

    def score(self, params, observations, actions, features=None, step_weights=None):
        if features is None:
            raise ValueError("belief policies need per-step belief features")
        actions = np.asarray(actions, dtype=float)
        K, T = actions.shape[:2]
        grad = np.zeros(self.n_params)
        if K == 0 or T == 0:
            return np.zeros((K, T)), grad
        feats = np.asarray(features, dtype=float)[:, :T].reshape(K * T, -1)
        acts = actions.reshape(K * T, -1)
        p, mean, cache = self._mean(params, feats)
        log_std = np.broadcast_to(p["log_std"], mean.shape)
        logp = self.head.log_prob(acts, mean, log_std).reshape(K, T)
        if not np.all(np.isfinite(logp)):
            bad = np.argwhere(~np.isfinite(logp))[0]
            raise NumericOverflowError("non-finite policy log-density", step=int(bad[1]))
        sw = _step_weights(step_weights, K, T)
        if sw is not None:
            g = self.layout.unflatten(grad)
            d_mean, d_log_std = self.head.grads(acts, mean, log_std)
            w = sw.reshape(K * T, 1)
            g["log_std"] += np.sum(w * d_log_std, axis=0)
            self.decoder.backward(p, g, cache, w * d_mean)
        return logp, grad

    def descriptor(self):
        return {
            "kind": "belief",
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "hidden": list(self.hidden),
            "action_bound": None if self.head.bound is None else self.head.bound.tolist(),
            "init_log_std": self.init_log_std,
            "input_transform": self.input_transform,
        }


class RecurrentPolicy(Policy):
    """History-dependent Gaussian policy.

    Encoder: dense+ReLU+LayerNorm blocks, a linear projection with LayerNorm,
    ``n_cells`` stacked gated recurrent cells and a linear readout; the
    decoder is the same dense stack used by :class:`BeliefPolicy`.
    """

    input_mode = "history"

    def __init__(self, obs_dim: int, action_dim: int, encoder=(256, 256), embed: int = 128,
                 cell: int = 128, n_cells: int = 2, readout: int = 128, decoder=(256, 256),
                 action_bound=None, init_log_std=0.0):
        self.obs_dim = int(obs_dim)
        self.action_dim = int(action_dim)
        self.encoder_sizes = tuple(int(h) for h in encoder)
        self.embed = int(embed)
        self.cell = int(cell)
        self.n_cells = int(n_cells)
        self.readout = int(readout)
        self.decoder_sizes = tuple(int(h) for h in decoder)
        self.head = GaussianHead(self.action_dim, action_bound)
        self.init_log_std = float(init_log_std)
        self.carry_dim = self.n_cells * self.cell

        L = self.layout = nn.ParamLayout()
        dims = [self.obs_dim + self.action_dim] + list(self.encoder_sizes)
        for i in range(len(self.encoder_sizes)):
            L.add(f"enc_W{i}", (dims[i], dims[i + 1]))
            L.add(f"enc_b{i}", (dims[i + 1],))
            L.add(f"enc_g{i}", (dims[i + 1],))
            L.add(f"enc_beta{i}", (dims[i + 1],))
        L.add("proj_W", (dims[-1], self.embed))
        L.add("proj_b", (self.embed,))
        L.add("proj_g", (self.embed,))
        L.add("proj_beta", (self.embed,))
        for c in range(self.n_cells):
            in_dim = self.embed if c == 0 else self.cell
            L.add(f"gru{c}_Wi", (in_dim, 3 * self.cell))
            L.add(f"gru{c}_Wh", (self.cell, 3 * self.cell))
            L.add(f"gru{c}_bi", (3 * self.cell,))
            L.add(f"gru{c}_bh", (3 * self.cell,))
        L.add("out_W", (self.cell, self.readout))
        L.add("out_b", (self.readout,))
        self.decoder = _MLPDecoder(L, "dec_", self.readout, self.decoder_sizes, self.action_dim)
        L.add("log_std", (self.action_dim,))

    def init_params(self, rng) -> np.ndarray:
        flat, p = self.layout.zeros()
        dims = [self.obs_dim + self.action_dim] + list(self.encoder_sizes)
        for i in range(len(self.encoder_sizes)):
            p[f"enc_W{i}"][...] = nn.uniform_fan_in(rng, dims[i], dims[i + 1])
            p[f"enc_g{i}"][...] = 1.0
        p["proj_W"][...] = nn.uniform_fan_in(rng, dims[-1], self.embed)
        p["proj_g"][...] = 1.0
        H = self.cell
        for c in range(self.n_cells):
            in_dim = self.embed if c == 0 else H
            p[f"gru{c}_Wi"][...] = nn.uniform_fan_in(rng, in_dim, 3 * H)
            p[f"gru{c}_Wh"][...] = np.concatenate([nn.orthogonal(rng, H, H) for _ in range(3)], axis=1)
        p["out_W"][...] = nn.uniform_fan_in(rng, H, self.readout)
        self.decoder.init(rng, p)
        p["log_std"][...] = self.init_log_std
        return flat

    def _cell_forward(self, p, carry, obs, prev_action):
        """One recurrent step; returns the new carry and everything backward needs."""
        x0 = np.concatenate([obs, prev_action], axis=1)
        enc = []
        x = x0
        for i in range(len(self.encoder_sizes)):
            act = nn.relu(nn.dense(x, p[f"enc_W{i}"], p[f"enc_b{i}"]))
            y, ln = nn.layernorm(act, p[f"enc_g{i}"], p[f"enc_beta{i}"])
            enc.append((x, act, ln))
            x = y
        proj_in = x
        e, proj_ln = nn.layernorm(nn.dense(x, p["proj_W"], p["proj_b"]), p["proj_g"], p["proj_beta"])
        H = self.cell
        hs = [carry[:, c * H:(c + 1) * H] for c in range(self.n_cells)]
        gru_caches = []
        inp = e
        new_hs = []
        for c in range(self.n_cells):
            h_new, gc = nn.gru(inp, hs[c], p[f"gru{c}_Wi"], p[f"gru{c}_Wh"], p[f"gru{c}_bi"], p[f"gru{c}_bh"])
            gru_caches.append(gc)
            new_hs.append(h_new)
            inp = h_new
        new_carry = np.concatenate(new_hs, axis=1)
        cache = (enc, proj_in, proj_ln, gru_caches)
        return new_carry, cache

    def _cell_backward(self, p, g, cache, d_top, d_carry):
        """Backward through one step given grads w.r.t. the top output and the new carry."""
        enc, proj_in, proj_ln, gru_caches = cache
        H = self.cell
        dh = [d_carry[:, c * H:(c + 1) * H].copy() for c in range(self.n_cells)]
        dh[-1] += d_top
        d_prev = np.zeros_like(d_carry)
        d_in = None
        for c in range(self.n_cells - 1, -1, -1):
            d_out = dh[c] if d_in is None else dh[c] + d_in
            d_in, dh_prev = nn.gru_backward(d_out, gru_caches[c], p[f"gru{c}_Wi"], p[f"gru{c}_Wh"],
                                            g[f"gru{c}_Wi"], g[f"gru{c}_Wh"], g[f"gru{c}_bi"], g[f"gru{c}_bh"])
            d_prev[:, c * H:(c + 1) * H] = dh_prev
        d = nn.layernorm_backward(d_in, proj_ln, p["proj_g"], g["proj_g"], g["proj_beta"])
        d = nn.dense_backward(d, proj_in, p["proj_W"], g["proj_W"], g["proj_b"])
        for i in range(len(self.encoder_sizes) - 1, -1, -1):
            x, act, ln = enc[i]
            d = nn.layernorm_backward(d, ln, p[f"enc_g{i}"], g[f"enc_g{i}"], g[f"enc_beta{i}"])
            d = nn.relu_backward(d, act)
            d = nn.dense_backward(d, x, p[f"enc_W{i}"], g[f"enc_W{i}"], g[f"enc_b{i}"])
        return d_prev

    def advance(self, params, carry, obs, prev_action, t):
        p = self.layout.unflatten(params)
        obs = np.asarray(obs, dtype=float).reshape(len(carry), self.obs_dim)
        if prev_action is None or t == 0:
            prev_action = np.zeros((len(carry), self.action_dim))
        new_carry, _ = self._cell_forward(p, carry, obs, np.asarray(prev_action, dtype=float))
        return new_carry

    def _mean(self, p, carry):
        top = carry[:, (self.n_cells - 1) * self.cell:]
        r = nn.dense(top, p["out_W"], p["out_b"])
        mean, dcache = self.decoder.forward(p, r)
        return mean, (top, r, dcache)

    def sample(self, params, carry, features, rng):
        p = self.layout.unflatten(params)
        mean, _ = self._mean(p, carry)
        return self.head.sample(mean, np.broadcast_to(p["log_std"], mean.shape), rng)

    def mode(self, params, carry, features):
        mean, _ = self._mean(self.layout.unflatten(params), carry)
        return self.head.mode(mean)

    def log_prob(self, params, carry, features, actions):
        p = self.layout.unflatten(params)
        mean, _ = self._mean(p, carry)
        return self.head.log_prob(np.asarray(actions, dtype=float), mean, np.broadcast_to(p["log_std"], mean.shape))

    def score(self, params, observations, actions, features=None, step_weights=None):
        observations = np.asarray(observations, dtype=float)
        actions = np.asarray(actions, dtype=float)
        K, T = actions.shape[:2]
        grad = np.zeros(self.n_params)
        logp = np.zeros((K, T))
        if K == 0 or T == 0:
            return logp, grad
        p = self.layout.unflatten(params)
        sw = _step_weights(step_weights, K, T)
        carry = self.initial_carry(K)
        caches, heads = [], []
        prev = np.zeros((K, self.action_dim))
        for t in range(T):
            carry, cache = self._cell_forward(p, carry, observations[:, t], prev)
            if not np.all(np.isfinite(carry)):
                raise NumericOverflowError("non-finite recurrent activation", step=t)
            mean, hcache = self._mean(p, carry)
            log_std = np.broadcast_to(p["log_std"], mean.shape)
            logp[:, t] = self.head.log_prob(actions[:, t], mean, log_std)
            caches.append(cache)
            heads.append((mean, hcache))
            prev = actions[:, t]
        if not np.all(np.isfinite(logp)):
            raise NumericOverflowError("non-finite policy log-density", step=int(np.argwhere(~np.isfinite(logp))[0][1]))
        if sw is None:
            return logp, grad
        g = self.layout.unflatten(grad)
        d_carry = np.zeros((K, self.carry_dim))
        for t in range(T - 1, -1, -1):
            mean, (top, r, dcache) = heads[t]
            log_std = np.broadcast_to(p["log_std"], mean.shape)
            d_mean, d_log_std = self.head.grads(actions[:, t], mean, log_std)
            w = sw[:, t:t + 1]
            g["log_std"] += np.sum(w * d_log_std, axis=0)
            dr = self.decoder.backward(p, g, dcache, w * d_mean)
            d_top = nn.dense_backward(dr, top, p["out_W"], g["out_W"], g["out_b"])
            d_carry = self._cell_backward(p, g, caches[t], d_top, d_carry)
        return logp, grad

    def descriptor(self):
        return {
            "kind": "recurrent",
            "obs_dim": self.obs_dim,
            "action_dim": self.action_dim,
            "encoder": list(self.encoder_sizes),
            "embed": self.embed,
            "cell": self.cell,
            "n_cells": self.n_cells,
            "readout": self.readout,
            "decoder": list(self.decoder_sizes),
            "action_bound": None if self.head.bound is None else self.head.bound.tolist(),
            "init_log_std": self.init_log_std,
        }


class OpenLoopPolicy(Policy):
    """Parameter-free fixed action schedule; the carry holds the time index."""

    input_mode = "open-loop"
    history_dependent = False
    carry_dim = 1

    def __init__(self, schedule):
        self.schedule = np.atleast_2d(np.asarray(schedule, dtype=float))
        self.action_dim = self.schedule.shape[1]
        self.layout = nn.ParamLayout()

    @classmethod
    def straight_line(cls, start, target, speed: float, horizon: int) -> "OpenLoopPolicy":
        """Head from ``start`` to ``target`` at ``speed`` per step, then stay."""
        start, target = np.asarray(start, dtype=float), np.asarray(target, dtype=float)
        gap = target - start
        dist = float(np.linalg.norm(gap))
        steps = np.zeros((int(horizon), start.size))
        travelled = 0.0
        for t in range(int(horizon)):
            move = min(float(speed), dist - travelled)
            if move <= 0:
                break
            steps[t] = gap / dist * move
            travelled += move
        return cls(steps)

    def init_params(self, rng=None) -> np.ndarray:
        return np.zeros(0)

    def advance(self, params, carry, obs, prev_action, t):
        return np.full((len(carry), 1), float(t))

    def _actions(self, carry):
        idx = np.minimum(carry[:, 0].astype(int), len(self.schedule) - 1)
        return self.schedule[idx]

    def mode(self, params, carry, features):
        return self._actions(carry)

    def sample(self, params, carry, features, rng):
        return self._actions(carry), np.zeros(len(carry))

    def log_prob(self, params, carry, features, actions):
        hit = np.all(np.isclose(actions, self._actions(carry)), axis=-1)
        return np.where(hit, 0.0, -np.inf)

    def score(self, params, observations, actions, features=None, step_weights=None):
        raise ConfigError("an open-loop schedule has no parameters to differentiate")

    def descriptor(self):
        return {"kind": "open-loop", "schedule": self.schedule.tolist()}


def policy_from_descriptor(desc) -> Policy:
    if isinstance(desc, str):
        desc = json.loads(desc)
    desc = dict(desc)
    kind = desc.pop("kind")
    if kind == "tabular":
        return TabularSoftmaxPolicy(**desc)
    if kind == "belief":
        return BeliefPolicy(**desc)
    if kind == "recurrent":
        return RecurrentPolicy(**desc)
    if kind == "open-loop":
        return OpenLoopPolicy(desc["schedule"])
    raise ConfigError(f"unknown policy kind {kind!r}")


def make_policy(model, input_mode: str = "belief", hidden=(256, 256), recurrent=None) -> Policy:
    """Default policy for ``model``; oracle models get a tabular policy."""
    if getattr(model, "discrete", False):
        return TabularSoftmaxPolicy(model.n_obs, model.n_actions, model.horizon)
    bound = None if model.action_bound is None else np.asarray(model.action_bound, dtype=float).tolist()
    if input_mode == "belief":
        return BeliefPolicy(model.state_dim, model.action_dim, hidden=hidden, action_bound=bound)
    if input_mode == "history":
        kwargs = dict(recurrent or {})
        kwargs.setdefault("decoder", hidden)
        return RecurrentPolicy(model.obs_dim, model.action_dim, action_bound=bound, **kwargs)
    raise ConfigError(f"unknown policy input mode {input_mode!r}")

"""Minimal layers with explicit forward caches and backward passes.

Only what the policies need: dense, ReLU, layer normalisation and a gated
recurrent cell. Everything is batched over the leading axis and float64.
"""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

LN_EPS = 1e-5


class ParamLayout:
    """Named slices of one flat parameter vector."""

    def __init__(self):
        self.shapes: "OrderedDict[str, tuple]" = OrderedDict()
        self._offsets = {}
        self.size = 0

    def add(self, name: str, shape) -> None:
        shape = tuple(int(s) for s in shape)
        if name in self.shapes:
            raise KeyError(f"duplicate parameter name {name!r}")
        n = int(np.prod(shape)) if shape else 1
        self.shapes[name] = shape
        self._offsets[name] = (self.size, self.size + n)
        self.size += n

    def unflatten(self, flat: np.ndarray) -> dict:
        if flat.shape != (self.size,):
            raise ValueError(f"expected parameter vector of length {self.size}, got {flat.shape}")
        return {k: flat[a:b].reshape(self.shapes[k]) for k, (a, b) in self._offsets.items()}

    def zeros(self):
        flat = np.zeros(self.size)
        return flat, self.unflatten(flat)

    def slice(self, name: str) -> slice:
        a, b = self._offsets[name]
        return slice(a, b)


def dense(x, W, b):
    return x @ W + b


def dense_backward(dy, x, W, gW, gb):
    gW += x.T @ dy
    gb += dy.sum(axis=0)
    return dy @ W.T


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(dy, y):
    return dy * (y > 0)


def layernorm(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return xhat * gain + bias, (xhat, inv)


def layernorm_backward(dy, cache, gain, g_gain, g_bias):
    xhat, inv = cache
    g_gain += np.sum(dy * xhat, axis=0)
    g_bias += dy.sum(axis=0)
    dxhat = dy * gain
    return inv * (
        dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True)
    )


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru(x, h, Wi, Wh, bi, bh):
    """Gated recurrent cell; gate blocks are ordered (reset, update, candidate)."""
    H = h.shape[-1]
    gi = x @ Wi + bi
    gh = h @ Wh + bh
    r = sigmoid(gi[:, :H] + gh[:, :H])
    z = sigmoid(gi[:, H:2 * H] + gh[:, H:2 * H])
    hn = gh[:, 2 * H:]
    n = np.tanh(gi[:, 2 * H:] + r * hn)
    h_new = (1.0 - z) * n + z * h
    return h_new, (x, h, r, z, n, hn)


def gru_backward(dh_new, cache, Wi, Wh, gWi, gWh, gbi, gbh):
    """Returns (dx, dh) and accumulates parameter gradients in place."""
    x, h, r, z, n, hn = cache
    dn = dh_new * (1.0 - z)
    dz = dh_new * (h - n)
    dh = dh_new * z
    dn_pre = dn * (1.0 - n * n)
    dr = dn_pre * hn
    dhn = dn_pre * r
    dz_pre = dz * z * (1.0 - z)
    dr_pre = dr * r * (1.0 - r)
    d_gi = np.concatenate([dr_pre, dz_pre, dn_pre], axis=1)
    d_gh = np.concatenate([dr_pre, dz_pre, dhn], axis=1)
    gWi += x.T @ d_gi
    gbi += d_gi.sum(axis=0)
    gWh += h.T @ d_gh
    gbh += d_gh.sum(axis=0)
    dx = d_gi @ Wi.T
    dh = dh + d_gh @ Wh.T
    return dx, dh


def uniform_fan_in(rng, fan_in, fan_out, scale=1.0):
    lim = scale / np.sqrt(fan_in)
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


def orthogonal(rng, n, m, gain=1.0):
    a = rng.standard_normal((max(n, m), min(n, m)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    q = q if n >= m else q.T
    return gain * q[:n, :m]

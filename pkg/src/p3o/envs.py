"""Benchmark POMDPs with explicit densities.

Each environment is a :class:`PomdpModel` configured by a small parameter
dataclass. Defaults are chosen for desk-scale experiments; every field can be
overridden through ``make_*(**overrides)`` or the harness config.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import Optional

import numpy as np

from .core import PomdpModel
from .exceptions import ConfigError

LOG_2PI = float(np.log(2.0 * np.pi))


def gaussian_logpdf(x, mean, std) -> np.ndarray:
    """Diagonal Gaussian log-density summed over the last axis."""
    std = np.asarray(std, dtype=float)
    d = (np.asarray(x) - np.asarray(mean)) / std
    return np.sum(-0.5 * d * d - np.log(std) - 0.5 * LOG_2PI, axis=-1)


def wrap_angle(x):
    """Map angles to ``(-pi, pi]``."""
    y = np.mod(np.asarray(x) + np.pi, 2.0 * np.pi) - np.pi
    return np.where(y == -np.pi, np.pi, y)


def wrapped_normal_logpdf(x, mean, std, n_wraps: int = 3) -> np.ndarray:
    """Wrapped Gaussian density on the circle, truncated at ``n_wraps``.

    Evaluated on the wrapped difference so that the result is exactly
    ``2*pi``-periodic in ``x``.
    """
    d = wrap_angle(np.asarray(x) - np.asarray(mean))
    k = np.arange(-n_wraps, n_wraps + 1)
    terms = -0.5 * ((d[..., None] + 2.0 * np.pi * k) / std) ** 2
    m = np.max(terms, axis=-1)
    return m + np.log(np.sum(np.exp(terms - m[..., None]), axis=-1)) - np.log(std) - 0.5 * LOG_2PI


def _shape(size, d: int) -> tuple:
    return (tuple(np.atleast_1d(size)) if size != () else ()) + (d,)


def _check_positive(params, names):
    for name in names:
        value = np.asarray(getattr(params, name), dtype=float)
        if not np.all(np.isfinite(value)) or np.any(value <= 0):
            raise ConfigError(f"{type(params).__name__}.{name} must be positive and finite")


def _apply_overrides(params, overrides: dict):
    valid = {f.name for f in fields(params)}
    unknown = set(overrides) - valid
    if unknown:
        raise ConfigError(f"unknown parameters for {type(params).__name__}: {sorted(unknown)}")
    coerced = {}
    for key, value in overrides.items():
        current = getattr(params, key)
        if isinstance(current, tuple):
            value = tuple(float(v) for v in np.atleast_1d(value))
        elif isinstance(current, bool):
            value = bool(value)
        elif isinstance(current, int):
            value = int(value)
        elif isinstance(current, float):
            value = float(value)
        coerced[key] = value
    return replace(params, **coerced)


class _ParamModel(PomdpModel):
    params_cls = None

    def __init__(self, params=None, **overrides):
        params = params if params is not None else self.params_cls()
        self.params = _apply_overrides(params, overrides)
        self._validate()
        self.horizon = int(self.params.horizon)
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        self.slew_penalty = float(getattr(self.params, "slew_penalty", 0.0))
        if self.slew_penalty < 0:
            raise ConfigError("slew_penalty must be non-negative")

    def _validate(self):
        pass

    def describe(self):
        d = super().describe()
        d["params"] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self.params).items()}
        return d


# -- pendulum -----------------------------------------------------------------

@dataclass(frozen=True)
class PendulumParams:
    dt: float = 0.05
    horizon: int = 100
    gravity: float = 10.0
    mass: float = 1.0
    length: float = 1.0
    max_torque: float = 2.0
    max_speed: float = 8.0
    process_std: tuple = (0.01, 0.05)
    obs_std: float = 0.1
    init_mean: tuple = (np.pi, 0.0)
    init_std: tuple = (0.1, 0.1)
    slew_penalty: float = 0.05


class Pendulum(_ParamModel):
    """Torque-limited swing-up; the angle is measured from upright.

    State ``(theta, omega)``; observation ``(cos theta, sin theta)`` plus
    Gaussian noise, so angular velocity is never observed.
    """

    params_cls = PendulumParams
    state_dim, action_dim, obs_dim = 2, 1, 2
    name = "pendulum"

    def _validate(self):
        p = self.params
        _check_positive(p, ["dt", "gravity", "mass", "length", "max_torque", "max_speed",
                            "process_std", "obs_std", "init_std"])
        self.action_bound = np.array([p.max_torque])
        self.r_max = float(np.pi ** 2 + 0.1 * p.max_speed ** 2 + 0.001 * p.max_torque ** 2)

    def mean_transition(self, s, a):
        """Noise-free semi-implicit Euler step."""
        p = self.params
        s = np.asarray(s, dtype=float)
        th, om = s[..., 0], s[..., 1]
        u = np.clip(np.asarray(a, dtype=float)[..., 0], -p.max_torque, p.max_torque)
        om_new = om + p.dt * (p.gravity / p.length * np.sin(th) + u / (p.mass * p.length ** 2))
        th_new = th + p.dt * om_new
        return np.stack(np.broadcast_arrays(th_new, om_new), axis=-1)

    def energy(self, s):
        p = self.params
        s = np.asarray(s, dtype=float)
        return 0.5 * p.mass * p.length ** 2 * s[..., 1] ** 2 + p.mass * p.gravity * p.length * np.cos(s[..., 0])

    def sample_initial(self, rng, size=()):
        p = self.params
        return np.asarray(p.init_mean) + np.asarray(p.init_std) * rng.standard_normal(_shape(size, 2))

    def initial_logdensity(self, s):
        return gaussian_logpdf(s, self.params.init_mean, self.params.init_std)

    def transition_sample(self, s, a, rng):
        mean = self.mean_transition(s, a)
        return mean + np.asarray(self.params.process_std) * rng.standard_normal(mean.shape)

    def transition_logdensity(self, s_next, s, a):
        return gaussian_logpdf(s_next, self.mean_transition(s, a), self.params.process_std)

    def _obs_mean(self, s):
        th = np.asarray(s, dtype=float)[..., 0]
        return np.stack([np.cos(th), np.sin(th)], axis=-1)

    def observation_sample(self, s, rng):
        mean = self._obs_mean(s)
        return mean + self.params.obs_std * rng.standard_normal(mean.shape)

    def observation_logdensity(self, z, s):
        return gaussian_logpdf(z, self._obs_mean(s), self.params.obs_std)

    def reward(self, s_next, a_prev, t):
        p = self.params
        s_next = np.asarray(s_next, dtype=float)
        th = wrap_angle(s_next[..., 0])
        om = np.clip(s_next[..., 1], -p.max_speed, p.max_speed)
        u = np.clip(np.asarray(a_prev, dtype=float)[..., 0], -p.max_torque, p.max_torque)
        return -(th ** 2 + 0.1 * om ** 2 + 0.001 * u ** 2)


# -- cart-pole ----------------------------------------------------------------

@dataclass(frozen=True)
class CartPoleParams:
    dt: float = 0.02
    horizon: int = 100
    gravity: float = 9.8
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    half_length: float = 0.5
    max_force: float = 10.0
    x_bound: float = 2.4
    out_of_bounds_penalty: float = 2.0
    process_std: tuple = (0.005, 0.02, 0.005, 0.02)
    obs_std: tuple = (0.05, 0.05, 0.05)
    init_mean: tuple = (0.0, 0.0, np.pi, 0.0)
    init_std: tuple = (0.05, 0.05, 0.05, 0.05)
    slew_penalty: float = 0.05


def cartpole_derivatives(state, force, p: CartPoleParams) -> np.ndarray:
    """Continuous-time dynamics; ``state = (x, x_dot, theta, theta_dot)``, theta=0 upright."""
    state = np.asarray(state, dtype=float)
    x_dot, th, th_dot = state[..., 1], state[..., 2], state[..., 3]
    total = p.cart_mass + p.pole_mass
    sin, cos = np.sin(th), np.cos(th)
    temp = (force + p.pole_mass * p.half_length * th_dot ** 2 * sin) / total
    th_acc = (p.gravity * sin - cos * temp) / (p.half_length * (4.0 / 3.0 - p.pole_mass * cos ** 2 / total))
    x_acc = temp - p.pole_mass * p.half_length * th_acc * cos / total
    return np.stack(np.broadcast_arrays(x_dot, x_acc, th_dot, th_acc), axis=-1)


def cartpole_semi_implicit_step(state, force, p: CartPoleParams, dt: Optional[float] = None) -> np.ndarray:
    dt = p.dt if dt is None else dt
    state = np.asarray(state, dtype=float)
    d = cartpole_derivatives(state, force, p)
    x_dot = state[..., 1] + dt * d[..., 1]
    th_dot = state[..., 3] + dt * d[..., 3]
    return np.stack([state[..., 0] + dt * x_dot, x_dot, state[..., 2] + dt * th_dot, th_dot], axis=-1)


class CartPole(_ParamModel):
    """Cart-pole swing-up with hidden velocities.

    The state has a fifth component, an absorbing flag set once the cart
    leaves ``[-x_bound, x_bound]``. Absorbed states stay frozen and every
    later reward is ``-out_of_bounds_penalty``. The transition density of an
    absorbed state is a unit point mass (log-density 0 at the same state).
    """

    params_cls = CartPoleParams
    state_dim, action_dim, obs_dim = 5, 1, 3
    name = "cartpole"

    def _validate(self):
        p = self.params
        _check_positive(p, ["dt", "gravity", "cart_mass", "pole_mass", "half_length", "max_force",
                            "x_bound", "process_std", "obs_std", "init_std"])
        self.action_bound = np.array([p.max_force])
        x_cap = p.x_bound + 1.0
        self.r_max = float(max(1.0 + 0.05 * x_cap ** 2 + 1e-4 * p.max_force ** 2, p.out_of_bounds_penalty))

    def mean_transition(self, s, a):
        p = self.params
        s = np.asarray(s, dtype=float)
        u = np.clip(np.asarray(a, dtype=float)[..., 0], -p.max_force, p.max_force)
        nxt = cartpole_semi_implicit_step(s[..., :4], u, p)
        return np.concatenate([nxt, s[..., 4:5]], axis=-1)

    def _flag(self, x):
        return (np.abs(x) > self.params.x_bound).astype(float)

    def sample_initial(self, rng, size=()):
        p = self.params
        core = np.asarray(p.init_mean) + np.asarray(p.init_std) * rng.standard_normal(_shape(size, 4))
        return np.concatenate([core, self._flag(core[..., :1])], axis=-1)

    def initial_logdensity(self, s):
        s = np.asarray(s, dtype=float)
        lp = gaussian_logpdf(s[..., :4], self.params.init_mean, self.params.init_std)
        return np.where(s[..., 4] == self._flag(s[..., 0]), lp, -np.inf)

    def transition_sample(self, s, a, rng):
        s = np.asarray(s, dtype=float)
        mean = self.mean_transition(s, a)
        moved = mean[..., :4] + np.asarray(self.params.process_std) * rng.standard_normal(mean[..., :4].shape)
        moved = np.concatenate([moved, self._flag(moved[..., :1])], axis=-1)
        absorbed = np.broadcast_to(s[..., 4:5] > 0.5, moved.shape)
        return np.where(absorbed, np.broadcast_to(s, moved.shape), moved)

    def transition_logdensity(self, s_next, s, a):
        s_next = np.asarray(s_next, dtype=float)
        s = np.asarray(s, dtype=float)
        mean = self.mean_transition(s, a)
        lp = gaussian_logpdf(s_next[..., :4], mean[..., :4], self.params.process_std)
        lp = np.where(s_next[..., 4] == self._flag(s_next[..., 0]), lp, -np.inf)
        same = np.all(s_next == s, axis=-1)
        return np.where(s[..., 4] > 0.5, np.where(same, 0.0, -np.inf), lp)

    def _obs_mean(self, s):
        s = np.asarray(s, dtype=float)
        return np.stack([s[..., 0], np.cos(s[..., 2]), np.sin(s[..., 2])], axis=-1)

    def observation_sample(self, s, rng):
        mean = self._obs_mean(s)
        return mean + np.asarray(self.params.obs_std) * rng.standard_normal(mean.shape)

    def observation_logdensity(self, z, s):
        return gaussian_logpdf(z, self._obs_mean(s), self.params.obs_std)

    def reward(self, s_next, a_prev, t):
        p = self.params
        s_next = np.asarray(s_next, dtype=float)
        x = np.clip(s_next[..., 0], -p.x_bound - 1.0, p.x_bound + 1.0)
        u = np.clip(np.asarray(a_prev, dtype=float)[..., 0], -p.max_force, p.max_force)
        r = np.cos(s_next[..., 2]) - 0.05 * x ** 2 - 1e-4 * u ** 2
        return np.where(s_next[..., 4] > 0.5, -p.out_of_bounds_penalty, r)


# -- light-dark ---------------------------------------------------------------

@dataclass(frozen=True)
class LightDarkParams:
    horizon: int = 30
    light_x: float = 5.0
    goal: tuple = (0.0, 0.0)
    sigma_min: float = 0.1
    noise_gain: float = 2.0
    action_bound: float = 3.0
    action_cost: float = 0.01
    process_std: float = 0.1
    init_mean: tuple = (2.0, 2.0)
    init_std: float = 3.0
    max_distance: float = 20.0
    slew_penalty: float = 0.05


class LightDark(_ParamModel):
    """2-D single integrator whose position observation is sharp only near ``x = light_x``.

    Observation noise std is ``sigma_min + noise_gain * (x - light_x)^2``.
    Reward ``-|s - goal|^2 - action_cost * |a|^2`` with the squared distance
    capped at ``max_distance^2`` so that it stays bounded.
    """

    params_cls = LightDarkParams
    state_dim, action_dim, obs_dim = 2, 2, 2
    name = "lightdark"

    def _validate(self):
        p = self.params
        _check_positive(p, ["sigma_min", "noise_gain", "action_bound", "process_std", "init_std",
                            "max_distance"])
        if p.action_cost < 0:
            raise ConfigError("action_cost must be non-negative")
        self.action_bound = np.full(2, p.action_bound)
        self.r_max = float(p.max_distance ** 2 + p.action_cost * 2 * p.action_bound ** 2)

    def obs_std(self, s):
        x = np.asarray(s, dtype=float)[..., 0]
        return self.params.sigma_min + self.params.noise_gain * (x - self.params.light_x) ** 2

    def in_light(self, s, width: float = 0.5):
        return np.abs(np.asarray(s)[..., 0] - self.params.light_x) <= width

    def light_before_goal(self, paths, width: float = 0.5, goal_radius: float = 0.5):
        """Per path (..., T+1, 2): was the light band entered before the goal disc?

        A path that never enters the light counts as False; one that enters the
        light but never reaches the goal counts as True.
        """
        paths = np.asarray(paths, dtype=float)
        lit = self.in_light(paths, width)
        home = np.linalg.norm(paths, axis=-1) <= goal_radius
        first_home = np.where(home.any(-1), home.argmax(-1), paths.shape[-2])
        return lit.any(-1) & (lit.argmax(-1) < first_home)

    def sample_initial(self, rng, size=()):
        return np.asarray(self.params.init_mean) + self.params.init_std * rng.standard_normal(_shape(size, 2))

    def initial_logdensity(self, s):
        return gaussian_logpdf(s, self.params.init_mean, self.params.init_std)

    def _clip_action(self, a):
        b = self.params.action_bound
        return np.clip(np.asarray(a, dtype=float), -b, b)

    def transition_sample(self, s, a, rng):
        mean = np.asarray(s, dtype=float) + self._clip_action(a)
        return mean + self.params.process_std * rng.standard_normal(mean.shape)

    def transition_logdensity(self, s_next, s, a):
        return gaussian_logpdf(s_next, np.asarray(s, dtype=float) + self._clip_action(a), self.params.process_std)

    def observation_sample(self, s, rng):
        s = np.asarray(s, dtype=float)
        return s + self.obs_std(s)[..., None] * rng.standard_normal(s.shape)

    def observation_logdensity(self, z, s):
        return gaussian_logpdf(z, s, self.obs_std(s)[..., None])

    def reward(self, s_next, a_prev, t):
        p = self.params
        d2 = np.sum((np.asarray(s_next, dtype=float) - np.asarray(p.goal)) ** 2, axis=-1)
        a = self._clip_action(a_prev)
        return -(np.minimum(d2, p.max_distance ** 2) + p.action_cost * np.sum(a * a, axis=-1))


# -- triangulation ------------------------------------------------------------

@dataclass(frozen=True)
class TriangulationParams:
    horizon: int = 40
    bearing_std: float = 0.05
    origin_radius: float = 1e-6
    n_wraps: int = 3
    action_bound: float = 0.5
    action_cost: float = 0.01
    process_std: float = 0.05
    init_mean: tuple = (2.0, -2.0)
    init_std: float = 1.0
    max_distance: float = 20.0
    slew_penalty: float = 0.05


class Triangulation(_ParamModel):
    """2-D single integrator observed only through its bearing to the origin.

    The bearing is ``atan2(-y, -x)`` (direction from the agent to the origin)
    with wrapped-Gaussian noise. Within ``origin_radius`` of the origin the
    bearing is undefined and the observation is uniform on the circle.
    """

    params_cls = TriangulationParams
    state_dim, action_dim, obs_dim = 2, 2, 1
    name = "triangulation"

    def _validate(self):
        p = self.params
        _check_positive(p, ["bearing_std", "origin_radius", "action_bound", "process_std", "init_std",
                            "max_distance"])
        if p.n_wraps < 0:
            raise ConfigError("n_wraps must be non-negative")
        self.action_bound = np.full(2, p.action_bound)
        self.r_max = float(p.max_distance ** 2 + p.action_cost * 2 * p.action_bound ** 2)

    @staticmethod
    def bearing(s):
        s = np.asarray(s, dtype=float)
        return wrap_angle(np.arctan2(-s[..., 1], -s[..., 0]))

    def _near_origin(self, s):
        return np.hypot(np.asarray(s)[..., 0], np.asarray(s)[..., 1]) < self.params.origin_radius

    def sample_initial(self, rng, size=()):
        return np.asarray(self.params.init_mean) + self.params.init_std * rng.standard_normal(_shape(size, 2))

    def initial_logdensity(self, s):
        return gaussian_logpdf(s, self.params.init_mean, self.params.init_std)

    def _clip_action(self, a):
        b = self.params.action_bound
        return np.clip(np.asarray(a, dtype=float), -b, b)

    def transition_sample(self, s, a, rng):
        mean = np.asarray(s, dtype=float) + self._clip_action(a)
        return mean + self.params.process_std * rng.standard_normal(mean.shape)

    def transition_logdensity(self, s_next, s, a):
        return gaussian_logpdf(s_next, np.asarray(s, dtype=float) + self._clip_action(a), self.params.process_std)

    def observation_sample(self, s, rng):
        s = np.asarray(s, dtype=float)
        noisy = self.bearing(s) + self.params.bearing_std * rng.standard_normal(s.shape[:-1])
        uniform = rng.uniform(-np.pi, np.pi, size=s.shape[:-1])
        return wrap_angle(np.where(self._near_origin(s), uniform, noisy))[..., None]

    def observation_logdensity(self, z, s):
        z = np.asarray(z, dtype=float)[..., 0]
        lp = wrapped_normal_logpdf(z, self.bearing(s), self.params.bearing_std, self.params.n_wraps)
        return np.where(self._near_origin(s), -np.log(2.0 * np.pi), lp)

    def reward(self, s_next, a_prev, t):
        p = self.params
        d2 = np.sum(np.asarray(s_next, dtype=float) ** 2, axis=-1)
        a = self._clip_action(a_prev)
        return -(np.minimum(d2, p.max_distance ** 2) + p.action_cost * np.sum(a * a, axis=-1))


# -- linear-Gaussian ----------------------------------------------------------

@dataclass(frozen=True)
class LinearGaussianParams:
    """Scalar defaults; matrices may be given as flat tuples of length ``d*d``."""

    dim: int = 1
    horizon: int = 100
    transition: tuple = (0.9,)
    control: tuple = (1.0,)
    observation: tuple = (1.0,)
    process_std: float = 0.5
    obs_std: float = 0.5
    init_mean: tuple = (0.0,)
    init_std: float = 1.0
    max_distance: float = 20.0
    action_bound: float = 0.0  # 0 means unbounded actions
    slew_penalty: float = 0.0


class LinearGaussian(_ParamModel):
    """``s' = A s + B a + noise``, ``z = C s + noise``, reward ``-|s|^2`` (capped)."""

    params_cls = LinearGaussianParams
    name = "linear-gaussian"

    def _validate(self):
        p = self.params
        d = int(p.dim)
        if d not in (1, 2):
            raise ConfigError("linear-Gaussian model supports dimension 1 or 2")
        self.state_dim = self.action_dim = self.obs_dim = d
        self.A = np.asarray(p.transition, dtype=float).reshape(d, d)
        self.B = np.asarray(p.control, dtype=float).reshape(d, d)
        self.C = np.asarray(p.observation, dtype=float).reshape(d, d)
        self.m0 = np.broadcast_to(np.asarray(p.init_mean, dtype=float), (d,)).copy()
        if p.process_std < 0 or p.obs_std < 0 or p.init_std < 0:
            raise ConfigError("noise scales must be non-negative")
        self.action_bound = None if p.action_bound <= 0 else np.full(d, p.action_bound)
        self.r_max = float(p.max_distance ** 2)

    def sample_initial(self, rng, size=()):
        return self.m0 + self.params.init_std * rng.standard_normal(_shape(size, self.state_dim))

    def initial_logdensity(self, s):
        return gaussian_logpdf(s, self.m0, self.params.init_std)

    def mean_transition(self, s, a):
        return np.asarray(s, dtype=float) @ self.A.T + np.asarray(a, dtype=float) @ self.B.T

    def transition_sample(self, s, a, rng):
        mean = self.mean_transition(s, a)
        return mean + self.params.process_std * rng.standard_normal(mean.shape)

    def transition_logdensity(self, s_next, s, a):
        return gaussian_logpdf(s_next, self.mean_transition(s, a), self.params.process_std)

    def observation_sample(self, s, rng):
        mean = np.asarray(s, dtype=float) @ self.C.T
        return mean + self.params.obs_std * rng.standard_normal(mean.shape)

    def observation_logdensity(self, z, s):
        return gaussian_logpdf(z, np.asarray(s, dtype=float) @ self.C.T, self.params.obs_std)

    def reward(self, s_next, a_prev, t):
        d2 = np.sum(np.asarray(s_next, dtype=float) ** 2, axis=-1)
        return -np.minimum(d2, self.params.max_distance ** 2)


def kalman_filter(model: LinearGaussian, observations, actions):
    """Exact filtering means and covariances for a :class:`LinearGaussian` model.

    ``observations`` has shape ``(T+1, d)`` and ``actions`` ``(T, d)``; the
    result holds ``p(s_t | z_{0:t}, a_{0:t-1})`` for ``t = 0..T``.
    """
    p = model.params
    d = model.state_dim
    z = np.asarray(observations, dtype=float).reshape(-1, d)
    a = np.asarray(actions, dtype=float).reshape(-1, d)
    Q = p.process_std ** 2 * np.eye(d)
    R = p.obs_std ** 2 * np.eye(d)
    m = model.m0.copy()
    P = p.init_std ** 2 * np.eye(d)
    means, covs = [], []
    for t in range(len(z)):
        if t > 0:
            m = model.A @ m + model.B @ a[t - 1]
            P = model.A @ P @ model.A.T + Q
        S = model.C @ P @ model.C.T + R
        if np.allclose(S, 0.0):
            gain = np.linalg.pinv(model.C)
        else:
            gain = P @ model.C.T @ np.linalg.inv(S)
        m = m + gain @ (z[t] - model.C @ m)
        P = (np.eye(d) - gain @ model.C) @ P
        P = 0.5 * (P + P.T)
        means.append(m.copy())
        covs.append(P.copy())
    return np.array(means), np.array(covs)


def make_pendulum(params: Optional[PendulumParams] = None, **overrides) -> Pendulum:
    return Pendulum(params, **overrides)


def make_cartpole(params: Optional[CartPoleParams] = None, **overrides) -> CartPole:
    return CartPole(params, **overrides)


def make_lightdark(params: Optional[LightDarkParams] = None, **overrides) -> LightDark:
    return LightDark(params, **overrides)


def make_triangulation(params: Optional[TriangulationParams] = None, **overrides) -> Triangulation:
    return Triangulation(params, **overrides)


def make_linear_gaussian(params: Optional[LinearGaussianParams] = None, **overrides) -> LinearGaussian:
    return LinearGaussian(params, **overrides)


# -- registry -----------------------------------------------------------------

def _make_oracle(horizon: Optional[int] = None, path: str = ""):
    from .oracle import DiscreteOraclePomdp, load_oracle, make_oracle_2x2x2

    if not path:
        return make_oracle_2x2x2(horizon=2 if horizon is None else int(horizon))
    model = load_oracle(path)
    if horizon is None:
        return model
    return DiscreteOraclePomdp(model.initial, model.transition, model.observation, model.reward_table,
                               int(horizon), name=model.name)


ENVIRONMENTS = {
    "pendulum": make_pendulum,
    "cartpole": make_cartpole,
    "lightdark": make_lightdark,
    "triangulation": make_triangulation,
    "linear-gaussian": make_linear_gaussian,
    "oracle": _make_oracle,
    "oracle-2x2x2": _make_oracle,
}


def make_model(name: str, **overrides) -> PomdpModel:
    """Build a registered environment; keyword overrides replace parameter defaults."""
    try:
        factory = ENVIRONMENTS[name]
    except KeyError:
        raise ConfigError(f"unknown environment {name!r}; known: {sorted(ENVIRONMENTS)}") from None
    if name.startswith("oracle"):
        unknown = set(overrides) - {"horizon", "path"}
        if unknown:
            raise ConfigError(f"unknown parameters for the oracle model: {sorted(unknown)}")
    return factory(**overrides)

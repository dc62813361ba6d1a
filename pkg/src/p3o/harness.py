"""Experiment configuration, training loops, evaluation and run artifacts.

A run directory holds::

    config.txt              flat dotted key=value snapshot of the experiment
    curve.tsv               one row per evaluation point
    events.jsonl            one JSON object per training event
    checkpoint_latest.p3o   parameters and optimizer state after the last evaluation
    checkpoint_best.p3o     parameters with the best mean evaluation return
    trajectories.npz        rollouts of the most recent evaluation
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional

import numpy as np

from .belief import BeliefParticles, BootstrapBeliefFilter, RESAMPLING_SCHEMES, multinomial_indices
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .core import check_model
from .envs import ENVIRONMENTS, make_model
from .exceptions import AllParticlesCollapsedError, ConfigError, NumericFailure, P3OError
from .gradient import BASELINES, OptimizerState, apply_update, p3o_gradient, reinforce_gradient
from .nested import NestedSmcConfig, run_nested_filter, sample_prior_rollouts
from .policy import make_policy
from .rng import as_generator, stream
from .smoothing import SMOOTHING_MODES, backward_sample

log = logging.getLogger(__name__)

MAX_CONSECUTIVE_COLLAPSES = 3
CURVE_COLUMNS = ("iteration", "interactions", "mean_return", "stderr", "wall_seconds")

# stream addresses under the experiment seed
_INIT, _TRAIN, _EVAL = 0, 1, 2


class TrainingAborted(NumericFailure):
    """Raised after repeated all-particle collapse; carries the diagnostics."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


class RunWriteError(P3OError, OSError):
    """Writing a run artifact failed; the last complete checkpoint is kept."""


class MissingRunFilesError(ConfigError):
    def __init__(self, run_dir, missing):
        self.missing = [str(p) for p in missing]
        super().__init__(f"run directory {run_dir} is missing: " + ", ".join(self.missing))


# -- configuration ------------------------------------------------------------

@dataclass
class SmcSection:
    n_history: int = 128
    n_belief: int = 32
    resample_mode: str = "multinomial"
    ess_threshold: Optional[float] = None
    slew_penalty: Optional[float] = None


@dataclass
class PolicySection:
    input_mode: str = "belief"
    hidden: tuple = (256, 256)
    init_log_std: float = 0.0


@dataclass
class OptimSection:
    method: str = "adam"
    lr: float = 1e-3
    clip_norm: Optional[float] = 10.0
    schedule: str = "constant"
    decay: float = 0.0


@dataclass
class TrainSection:
    iterations: int = 100
    minibatches: int = 8
    minibatch_size: int = 16
    smoothing: str = "two-ancestor"  # or "full" / "none" (lineage resampling)
    mh_steps: int = 1
    baseline: str = "none"  # REINFORCE only


@dataclass
class EvalSection:
    every: int = 10
    n_rollouts: int = 1024
    n_belief: int = 32
    deterministic: bool = False
    n_stored: int = 8


_SECTIONS = {"smc": SmcSection, "policy": PolicySection, "optim": OptimSection,
             "train": TrainSection, "eval": EvalSection}
_OPTIONAL_FLOATS = {("smc", "ess_threshold"), ("smc", "slew_penalty"), ("optim", "clip_norm")}


def parse_value(text):
    """Parse one config value: none, bool, int, float, comma list or plain string."""
    if not isinstance(text, str):
        return text
    s = text.strip()
    low = s.lower()
    if low in ("none", "null", ""):
        return None
    if low in ("true", "false"):
        return low == "true"
    if "," in s:
        return tuple(parse_value(part) for part in s.split(",") if part.strip())
    for cast in (int, float):
        try:
            return cast(s)
        except ValueError:
            pass
    return s


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(format_value(v) for v in value) + ("," if len(value) == 1 else "")
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(section: str, name: str, default, value):
    if value is None:
        if (section, name) in _OPTIONAL_FLOATS:
            return None
        if isinstance(default, str):
            return "none"  # a literal choice such as train.baseline=none
        raise ConfigError(f"{section}.{name} may not be empty")
    try:
        if (section, name) in _OPTIONAL_FLOATS:
            return float(value)
        if isinstance(default, bool):
            if isinstance(value, bool):
                return value
            raise ValueError(value)
        if isinstance(default, tuple):
            return tuple(int(v) for v in (value if isinstance(value, tuple) else (value,)))
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(default, float):
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"invalid value {value!r} for {section}.{name}") from None


@dataclass
class ExperimentConfig:
    """Everything that determines a training run (together with ``seed``)."""

    env: str = "lightdark"
    env_params: dict = field(default_factory=dict)
    eta: float = 1.0
    seed: int = 0
    output_dir: Optional[str] = None
    smc: SmcSection = field(default_factory=SmcSection)
    policy: PolicySection = field(default_factory=PolicySection)
    optim: OptimSection = field(default_factory=OptimSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)

    # flat dotted mapping ---------------------------------------------------
    @classmethod
    def from_flat(cls, items: dict) -> "ExperimentConfig":
        cfg = cls()
        cfg.update(items)
        return cfg

    def update(self, items: dict) -> "ExperimentConfig":
        for key, raw in items.items():
            value = parse_value(raw)
            head, _, rest = key.partition(".")
            if head == "env":
                if rest == "name":
                    self.env = str(value)
                elif rest:
                    self.env_params[rest] = value
                else:
                    raise ConfigError("use env.name=<environment>")
            elif head in ("eta", "seed", "output_dir") and not rest:
                if head == "eta":
                    self.eta = _coerce("", "eta", 1.0, value)
                elif head == "seed":
                    self.seed = _coerce("", "seed", 0, value)
                else:
                    self.output_dir = None if value is None else str(raw).strip()
            elif head in _SECTIONS and rest:
                section = getattr(self, head)
                names = {f.name: f for f in fields(section)}
                if rest not in names:
                    raise ConfigError(f"unknown config key {key!r}")
                setattr(section, rest, _coerce(head, rest, getattr(_SECTIONS[head](), rest), value))
            else:
                raise ConfigError(f"unknown config key {key!r}")
        return self

    def to_flat(self) -> dict:
        out = {"env.name": self.env, "eta": self.eta, "seed": self.seed, "output_dir": self.output_dir}
        for k, v in sorted(self.env_params.items()):
            out[f"env.{k}"] = v
        for name in _SECTIONS:
            for k, v in asdict(getattr(self, name)).items():
                out[f"{name}.{k}"] = v
        return out

    def to_text(self) -> str:
        return "".join(f"{k}={format_value(v)}\n" for k, v in self.to_flat().items())

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        return cls.from_flat(parse_config_text(text))

    @classmethod
    def from_file(cls, path, overrides: Optional[dict] = None) -> "ExperimentConfig":
        cfg = cls.from_text(Path(path).read_text())
        if overrides:
            cfg.update(overrides)
        return cfg

    # -- validation and construction ---------------------------------------
    def validate(self) -> "ExperimentConfig":
        if self.env not in ENVIRONMENTS:
            raise ConfigError(f"unknown environment {self.env!r}; known: {sorted(ENVIRONMENTS)}")
        if not self.eta > 0:
            raise ConfigError("eta must be positive")
        if self.eval.n_rollouts < 1:
            raise ConfigError("eval.n_rollouts must be >= 1")
        if self.eval.every < 1:
            raise ConfigError("eval.every must be >= 1")
        if self.train.iterations < 0:
            raise ConfigError("train.iterations must be >= 0")
        if self.train.minibatches < 1 or self.train.minibatch_size < 1:
            raise ConfigError("train.minibatches and train.minibatch_size must be >= 1")
        if self.train.smoothing not in SMOOTHING_MODES + ("none",):
            raise ConfigError(f"train.smoothing must be one of {SMOOTHING_MODES + ('none',)}")
        if self.train.baseline not in BASELINES:
            raise ConfigError(f"train.baseline must be one of {BASELINES}")
        if self.smc.resample_mode not in RESAMPLING_SCHEMES:
            raise ConfigError(f"smc.resample_mode must be one of {RESAMPLING_SCHEMES}")
        self.smc_config()
        OptimizerState.create(1, **self.optimizer_kwargs())
        self.build_model()
        return self

    def smc_config(self) -> NestedSmcConfig:
        return NestedSmcConfig(
            n_history=self.smc.n_history, n_belief=self.smc.n_belief, eta=self.eta,
            resample_mode=self.smc.resample_mode, seed=self.seed, slew_penalty=self.smc.slew_penalty,
            ess_threshold=self.smc.ess_threshold,
        )

    def optimizer_kwargs(self) -> dict:
        o = self.optim
        return dict(lr=o.lr, method=o.method, clip_norm=o.clip_norm, schedule=o.schedule, decay=o.decay)

    def build_model(self):
        return check_model(make_model(self.env, **self.env_params))

    def build_policy(self, model):
        policy = make_policy(model, self.policy.input_mode, hidden=self.policy.hidden)
        if hasattr(policy, "init_log_std"):
            policy.init_log_std = float(self.policy.init_log_std)
        return policy


def parse_config_text(text: str) -> dict:
    """``key=value`` lines; ``#`` starts a comment; later keys win."""
    items = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        items[key.strip()] = value.strip()
    return items


# -- evaluation ---------------------------------------------------------------

@dataclass
class EvaluationResult:
    mean_return: float
    stderr: float
    returns: np.ndarray  # (R,)
    states: np.ndarray  # (R, T+1, state_dim) true latent states
    actions: np.ndarray  # (R, T, action_dim)
    belief_means: np.ndarray  # (R, T+1, state_dim)
    belief_max_eig: np.ndarray  # (R, T+1) largest eigenvalue of the belief covariance

    def trajectory_arrays(self, n: Optional[int] = None) -> dict:
        n = len(self.returns) if n is None else min(n, len(self.returns))
        return {"returns": self.returns[:n], "states": self.states[:n], "actions": self.actions[:n],
                "belief_means": self.belief_means[:n], "belief_max_eig": self.belief_max_eig[:n]}


def _belief_summary(belief: BeliefParticles):
    w = np.exp(belief.log_weights)[..., None]
    mean = np.sum(w * belief.states, axis=-2)
    d = belief.states - mean[..., None, :]
    cov = np.einsum("rm,rmi,rmj->rij", w[..., 0], d, d)
    return mean, np.linalg.eigvalsh(cov)[:, -1]


def _uncollapse(belief: BeliefParticles) -> BeliefParticles:
    # an evaluation belief that lost all weight restarts from uniform weights
    if not np.any(belief.collapsed):
        return belief
    log_w = np.where(belief.collapsed[:, None], -np.log(belief.num_particles), belief.log_weights)
    return BeliefParticles(belief.states, log_w, belief.log_norm_increment, np.zeros_like(belief.collapsed))


def evaluate(policy, params, model, n_rollouts: int = 1024, rng=None, n_belief: int = 32,
             deterministic: bool = False) -> EvaluationResult:
    """Roll the policy out against the true latent-state process.

    An online particle belief feeds belief-mode policies (and is recorded for
    every policy). Returns are sums of the environment reward without any
    slew penalty.
    """
    if n_rollouts < 1:
        raise ConfigError("n_rollouts must be >= 1")
    rng = as_generator(rng)
    params = policy.check_params(params)
    R, T = int(n_rollouts), int(model.horizon)
    bf = BootstrapBeliefFilter(n_belief)
    states = np.zeros((R, T + 1, model.state_dim))
    actions = np.zeros((R, T, model.action_dim))
    means = np.zeros((R, T + 1, model.state_dim))
    eig = np.zeros((R, T + 1))
    returns = np.zeros(R)

    s = model.sample_initial(rng, size=(R,))
    belief = bf.init(model, R, rng)
    z = model.observation_sample(s, rng)
    belief = _uncollapse(bf.reweight(belief, z, model))
    carry = policy.advance(params, policy.initial_carry(R), z, None, 0)
    states[:, 0] = s
    means[:, 0], eig[:, 0] = _belief_summary(belief)
    for t in range(T):
        feats = policy.features(belief.states, belief.log_weights)
        if deterministic:
            a = policy.mode(params, carry, feats)
        else:
            a, _ = policy.sample(params, carry, feats, rng)
        s = model.transition_sample(s, a, rng)
        returns += model.reward(s, a, t + 1)
        z = model.observation_sample(s, rng)
        belief, _ = bf.resample(belief, rng)
        belief = bf.propagate(belief, a, model, rng)
        belief = _uncollapse(bf.reweight(belief, z, model))
        carry = policy.advance(params, carry, z, a, t + 1)
        states[:, t + 1] = s
        actions[:, t] = a
        means[:, t + 1], eig[:, t + 1] = _belief_summary(belief)
    stderr = float(np.std(returns, ddof=1) / np.sqrt(R)) if R > 1 else 0.0
    return EvaluationResult(float(np.mean(returns)), stderr, returns, states, actions, means, eig)


def evaluate_checkpoint(checkpoint, model, n_rollouts: int = 1024, rng=None, **kwargs) -> EvaluationResult:
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = load_checkpoint(checkpoint)
    policy = checkpoint.policy
    _check_dims(policy, model)
    return evaluate(policy, checkpoint.params, model, n_rollouts, rng, **kwargs)


def _check_dims(policy, model):
    desc = policy.descriptor()
    if desc["kind"] == "tabular":
        ok = getattr(model, "discrete", False) and desc["n_obs"] == model.n_obs and \
            desc["n_actions"] == model.n_actions and desc["horizon"] >= model.horizon
    elif desc["kind"] == "open-loop":
        ok = len(desc["schedule"][0]) == model.action_dim
    elif desc["kind"] == "belief":
        ok = desc["state_dim"] == model.state_dim and desc["action_dim"] == model.action_dim
    else:
        ok = desc["obs_dim"] == model.obs_dim and desc["action_dim"] == model.action_dim
    if not ok:
        raise ConfigError(f"checkpoint policy {desc['kind']!r} does not match the dimensions of {model.name!r}")


# -- learning curves ----------------------------------------------------------

@dataclass
class LearningCurve:
    iterations: List[int] = field(default_factory=list)
    interactions: List[int] = field(default_factory=list)
    mean_returns: List[float] = field(default_factory=list)
    stderrs: List[float] = field(default_factory=list)
    wall_seconds: List[float] = field(default_factory=list)

    def append(self, iteration, interactions, mean_return, stderr, wall):
        if self.iterations and iteration <= self.iterations[-1]:
            raise ValueError("learning-curve iterations must be strictly increasing")
        self.iterations.append(int(iteration))
        self.interactions.append(int(interactions))
        self.mean_returns.append(float(mean_return))
        self.stderrs.append(float(stderr))
        self.wall_seconds.append(float(wall))

    def __len__(self):
        return len(self.iterations)

    def row(self, i) -> tuple:
        return (self.iterations[i], self.interactions[i], self.mean_returns[i], self.stderrs[i],
                self.wall_seconds[i])

    def deterministic_rows(self) -> list:
        """Rows without the wall-clock column."""
        return [self.row(i)[:4] for i in range(len(self))]


def _curve_line(row) -> str:
    it, inter, mean, se, wall = row
    return f"{it}\t{inter}\t{mean!r}\t{se!r}\t{wall:.3f}\n"


def read_curve(path) -> LearningCurve:
    curve = LearningCurve()
    lines = Path(path).read_text().splitlines()
    for line in lines[1:]:
        if line.strip():
            it, inter, mean, se, wall = line.split("\t")
            curve.append(int(it), int(inter), float(mean), float(se), float(wall))
    return curve


# -- run directory ------------------------------------------------------------

class RunWriter:
    """Incremental writer for a run directory; ``None`` disables persistence."""

    def __init__(self, run_dir, config: ExperimentConfig):
        self.dir = None if run_dir is None else Path(run_dir)
        self.best = -np.inf
        if self.dir is None:
            return
        self._guard(self._init, config)

    def _guard(self, fn, *args):
        try:
            return fn(*args)
        except OSError as err:
            raise RunWriteError(f"writing to run directory {self.dir} failed: {err}") from err

    def _init(self, config):
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / "config.txt").write_text(config.to_text())
        (self.dir / "curve.tsv").write_text("\t".join(CURVE_COLUMNS) + "\n")
        (self.dir / "events.jsonl").write_text("")

    def event(self, kind: str, **payload):
        if self.dir is None:
            return
        line = json.dumps({"event": kind, **payload}, sort_keys=True, default=_json_default)

        def write():
            with open(self.dir / "events.jsonl", "a") as fh:
                fh.write(line + "\n")
        self._guard(write)

    def evaluation(self, curve: LearningCurve, result: EvaluationResult, policy, params, opt, n_stored: int):
        if self.dir is None:
            return
        iteration = curve.iterations[-1]

        def write():
            with open(self.dir / "curve.tsv", "a") as fh:
                fh.write(_curve_line(curve.row(len(curve) - 1)))
            meta = {"iteration": iteration, "mean_return": result.mean_return}
            save_checkpoint(self.dir / "checkpoint_latest.p3o", policy, params, opt, meta)
            if result.mean_return > self.best:
                self.best = result.mean_return
                save_checkpoint(self.dir / "checkpoint_best.p3o", policy, params, opt, meta)
            tmp = self.dir / "trajectories.tmp.npz"
            np.savez(tmp, iteration=iteration, **result.trajectory_arrays(n_stored))
            tmp.replace(self.dir / "trajectories.npz")
        self._guard(write)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


# -- training -----------------------------------------------------------------

@dataclass
class TrainResult:
    checkpoint: Checkpoint
    curve: LearningCurve
    run_dir: Optional[Path]
    last_evaluation: EvaluationResult
    n_collapsed_runs: int = 0


def _posterior_batch(result, model, policy, params, config: ExperimentConfig, rng):
    tape = result.tape
    K = config.train.minibatches * config.train.minibatch_size
    if config.train.smoothing == "none":
        pick = multinomial_indices(np.exp(tape.log_v[-1]), rng, n=K)
        return tape.gather(tape.lineage_indices()[pick])
    draws = backward_sample(tape, model, policy, params, K, mode=config.train.smoothing, rng=rng,
                            mh_steps=config.train.mh_steps)
    return draws.to_batch()


def _prior_batch(model, policy, params, config: ExperimentConfig, rng):
    batch = sample_prior_rollouts(model, policy, params, config.smc.n_history, config.smc.n_belief, rng)
    ok = np.all(np.isfinite(batch.rewards), axis=1)
    if not np.any(ok):
        raise AllParticlesCollapsedError("every prior rollout lost its belief")
    calls = batch.meta["n_model_calls"]
    if not np.all(ok):
        batch = batch.subset(np.flatnonzero(ok))
    batch.meta["n_model_calls"] = calls
    return batch


def _minibatch_updates(batch, params, policy, opt, config: ExperimentConfig, rng, algorithm: str):
    K = len(batch)
    mb = config.train.minibatch_size
    order = rng.permutation(K)
    n_updates = min(config.train.minibatches, max(1, K // mb))
    for b in range(n_updates):
        sub = batch.subset(order[b * mb:(b + 1) * mb])
        if algorithm == "p3o":
            est = p3o_gradient(sub, params, policy)
        else:
            est = reinforce_gradient(sub, params, policy, baseline=config.train.baseline
                                     if len(sub) > 1 or config.train.baseline != "loo" else "none")
        params, opt = apply_update(params, est, opt)
    return params, opt


def _run_training(config: ExperimentConfig, algorithm: str, run_dir=None) -> TrainResult:
    config.validate()
    run_dir = config.output_dir if run_dir is None else run_dir
    model = config.build_model()
    policy = config.build_policy(model)
    params = policy.init_params(stream(config.seed, _INIT))
    opt = OptimizerState.create(policy.n_params, **config.optimizer_kwargs())
    writer = RunWriter(run_dir, config)
    writer.event("start", algorithm=algorithm, n_params=policy.n_params, model=model.describe())
    curve = LearningCurve()
    start = time.perf_counter()
    interactions = 0
    ev = config.eval

    def do_eval(iteration):
        res = evaluate(policy, params, model, ev.n_rollouts, stream(config.seed, _EVAL, iteration),
                       n_belief=ev.n_belief, deterministic=ev.deterministic)
        curve.append(iteration, interactions, res.mean_return, res.stderr, time.perf_counter() - start)
        writer.evaluation(curve, res, policy, params, opt, ev.n_stored)
        writer.event("evaluation", iteration=iteration, interactions=interactions,
                     mean_return=res.mean_return, stderr=res.stderr)
        return res

    last = do_eval(0)
    smc = config.smc_config()
    consecutive = total_collapsed = 0
    for it in range(1, config.train.iterations + 1):
        rng = stream(config.seed, _TRAIN, it)
        try:
            if algorithm == "p3o":
                result = run_nested_filter(model, policy, params, smc, rng)
                interactions += result.n_model_calls
                batch = _posterior_batch(result, model, policy, params, config, rng)
                writer.event("smc", iteration=it, log_normalizer=result.log_normalizer,
                             min_ess=float(np.min(result.ess)), n_collapsed=result.n_collapsed)
            else:
                batch = _prior_batch(model, policy, params, config, rng)
                interactions += batch.meta["n_model_calls"]
        except AllParticlesCollapsedError as err:
            consecutive += 1
            total_collapsed += 1
            interactions += smc.n_history * smc.n_belief * model.horizon
            writer.event("collapse", iteration=it, message=str(err), consecutive=consecutive)
            log.warning("iteration %d: %s", it, err)
            if consecutive >= MAX_CONSECUTIVE_COLLAPSES:
                diag = {"iteration": it, "consecutive": consecutive, "last_error": str(err),
                        "eta": config.eta, "n_history": smc.n_history, "n_belief": smc.n_belief}
                writer.event("abort", **diag)
                raise TrainingAborted(
                    f"all particles collapsed in {consecutive} consecutive runs (last at iteration {it}): {err}",
                    diag) from err
            continue
        consecutive = 0
        params, opt = _minibatch_updates(batch, params, policy, opt, config, rng, algorithm)
        if it % ev.every == 0 or it == config.train.iterations:
            last = do_eval(it)
    writer.event("finish", iterations=config.train.iterations, n_skipped=opt.n_skipped,
                 n_clipped=opt.n_clipped)
    meta = {"iteration": curve.iterations[-1], "algorithm": algorithm}
    return TrainResult(Checkpoint(policy, params, opt, meta), curve,
                       None if run_dir is None else Path(run_dir), last, total_collapsed)


def train(config: ExperimentConfig, run_dir=None) -> TrainResult:
    """Risk-sensitive training from tilted nested-filter samples."""
    return _run_training(config, "p3o", run_dir)


def train_reinforce(config: ExperimentConfig, run_dir=None) -> TrainResult:
    """Risk-neutral baseline on untilted rollouts with the same budget and loop shape."""
    return _run_training(config, "reinforce", run_dir)


# -- plot data ----------------------------------------------------------------

def emit_plotdata(run_dir, out_dir=None) -> List[Path]:
    """Write ``plot_curve.tsv`` and ``plot_trajectories.tsv`` from a run directory."""
    run_dir = Path(run_dir)
    out_dir = run_dir if out_dir is None else Path(out_dir)
    required = [run_dir / "config.txt", run_dir / "curve.tsv"]
    missing = [p for p in required if not p.exists()]
    if missing:
        raise MissingRunFilesError(run_dir, missing)
    out_dir.mkdir(parents=True, exist_ok=True)
    curve = read_curve(run_dir / "curve.tsv")
    curve_path = out_dir / "plot_curve.tsv"
    with open(curve_path, "w") as fh:
        fh.write("\t".join(CURVE_COLUMNS) + "\n")
        for i in range(len(curve)):
            fh.write(_curve_line(curve.row(i)))

    traj_path = out_dir / "plot_trajectories.tsv"
    npz = run_dir / "trajectories.npz"
    if not npz.exists():
        traj_path.write_text("rollout\tt\n")
        return [curve_path, traj_path]
    with np.load(npz) as data:
        states, means, eig, actions = (data["states"], data["belief_means"], data["belief_max_eig"],
                                       data["actions"])
    R, T1, ds = states.shape
    da = actions.shape[-1]
    header = (["rollout", "t"] + [f"state_{i}" for i in range(ds)] + [f"belief_mean_{i}" for i in range(ds)]
              + ["belief_max_eig"] + [f"action_{i}" for i in range(da)])
    with open(traj_path, "w") as fh:
        fh.write("\t".join(header) + "\n")
        for r in range(R):
            for t in range(T1):
                act = actions[r, t] if t < T1 - 1 else np.full(da, np.nan)
                cells = [str(r), str(t)] + [repr(float(v)) for v in states[r, t]] + \
                    [repr(float(v)) for v in means[r, t]] + [repr(float(eig[r, t]))] + \
                    ["" if np.isnan(v) else repr(float(v)) for v in act]
                fh.write("\t".join(cells) + "\n")
    return [curve_path, traj_path]

"""scikit-learn style front end to the training harness.

Policy search has no design matrix, so ``fit`` ignores ``X`` and ``y``; the
environment and every hyper-parameter are constructor arguments, which makes
the estimators usable with ``get_params``/``set_params``/``clone``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .harness import ExperimentConfig, evaluate, train, train_reinforce
from .rng import stream


class P3OPolicySearch(BaseEstimator):
    """Risk-sensitive policy optimisation with nested particle filtering.

    Fitted attributes: ``policy_``, ``params_``, ``model_``, ``curve_``,
    ``optimizer_``.
    """

    _algorithm = "p3o"

    def __init__(self, env="lightdark", env_params=None, eta=1.0, n_history=128, n_belief=32,
                 input_mode="belief", hidden=(256, 256), init_log_std=0.0, lr=1e-3, iterations=100,
                 minibatches=8, minibatch_size=16, smoothing="two-ancestor", eval_every=10,
                 eval_rollouts=1024, seed=0, output_dir=None):
        self.env = env
        self.env_params = env_params
        self.eta = eta
        self.n_history = n_history
        self.n_belief = n_belief
        self.input_mode = input_mode
        self.hidden = hidden
        self.init_log_std = init_log_std
        self.lr = lr
        self.iterations = iterations
        self.minibatches = minibatches
        self.minibatch_size = minibatch_size
        self.smoothing = smoothing
        self.eval_every = eval_every
        self.eval_rollouts = eval_rollouts
        self.seed = seed
        self.output_dir = output_dir

    def to_config(self) -> ExperimentConfig:
        cfg = ExperimentConfig(env=self.env, env_params=dict(self.env_params or {}), eta=float(self.eta),
                               seed=int(self.seed), output_dir=self.output_dir)
        cfg.smc.n_history, cfg.smc.n_belief = int(self.n_history), int(self.n_belief)
        cfg.policy.input_mode, cfg.policy.hidden = self.input_mode, tuple(self.hidden)
        cfg.policy.init_log_std = float(self.init_log_std)
        cfg.optim.lr = float(self.lr)
        cfg.train.iterations = int(self.iterations)
        cfg.train.minibatches, cfg.train.minibatch_size = int(self.minibatches), int(self.minibatch_size)
        cfg.train.smoothing = self.smoothing
        cfg.eval.every, cfg.eval.n_rollouts = int(self.eval_every), int(self.eval_rollouts)
        return cfg

    def _train(self, cfg):
        return train(cfg)

    def fit(self, X=None, y=None):
        cfg = self.to_config().validate()
        result = self._train(cfg)
        self.model_ = cfg.build_model()
        self.policy_ = result.checkpoint.policy
        self.params_ = result.checkpoint.params
        self.optimizer_ = result.checkpoint.optimizer
        self.curve_ = result.curve
        return self

    def evaluate(self, n_rollouts=None, rng=None):
        """Evaluation rollouts of the fitted policy; see :func:`p3o.harness.evaluate`."""
        check_is_fitted(self, "params_")
        n = self.eval_rollouts if n_rollouts is None else n_rollouts
        rng = stream(self.seed, 2, 10 ** 6) if rng is None else rng
        return evaluate(self.policy_, self.params_, self.model_, n, rng)

    def score(self, X=None, y=None):
        """Mean evaluation return (higher is better)."""
        return self.evaluate().mean_return

    def predict(self, features):
        """Most likely action for an array of belief features (belief-mode policies only)."""
        check_is_fitted(self, "params_")
        features = np.atleast_2d(np.asarray(features, dtype=float))
        return self.policy_.mode(self.params_, None, features)


class ReinforcePolicySearch(P3OPolicySearch):
    """Risk-neutral score-function baseline with the same budget accounting."""

    _algorithm = "reinforce"

    def __init__(self, env="lightdark", env_params=None, eta=1.0, n_history=128, n_belief=32,
                 input_mode="belief", hidden=(256, 256), init_log_std=0.0, lr=1e-3, iterations=100,
                 minibatches=8, minibatch_size=16, smoothing="two-ancestor", eval_every=10,
                 eval_rollouts=1024, seed=0, output_dir=None, baseline="none"):
        super().__init__(env, env_params, eta, n_history, n_belief, input_mode, hidden, init_log_std, lr,
                         iterations, minibatches, minibatch_size, smoothing, eval_every, eval_rollouts,
                         seed, output_dir)
        self.baseline = baseline

    def to_config(self):
        cfg = super().to_config()
        cfg.train.baseline = self.baseline
        return cfg

    def _train(self, cfg):
        return train_reinforce(cfg)

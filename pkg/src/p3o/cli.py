"""Command-line entry point: ``p3o <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 numeric failure, 1 anything else.
Any dotted config key can be given as ``--key value`` or ``--key=value``
after the named options, e.g. ``p3o train --config run.cfg --smc.n_history 64``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .envs import make_model
from .exceptions import ConfigError, NumericFailure, P3OError
from .harness import ExperimentConfig, emit_plotdata, evaluate_checkpoint, parse_config_text, train, train_reinforce
from .nested import NestedSmcConfig, load_tape, run_nested_filter, save_tape
from .rng import stream
from .smoothing import SMOOTHING_MODES, backward_sample, degeneracy_report

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _dotted_overrides(extra):
    """Turn leftover ``--a.b value`` / ``--a.b=value`` tokens into a dict."""
    out, i = {}, 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"missing value for --{key}")
            value = extra[i + 1]
            i += 2
        out[key] = value
    return out


def _env_overrides(items):
    out = {}
    for key, value in items.items():
        if not key.startswith("env."):
            raise ConfigError(f"unknown option --{key}")
        out[key[4:]] = value
    return out


def _build_config(args, extra) -> ExperimentConfig:
    items = parse_config_text(Path(args.config).read_text()) if args.config else {}
    items.update(_dotted_overrides(extra))
    if args.out:
        items["output_dir"] = args.out
    return ExperimentConfig.from_flat(items).validate()


def _model_from_args(name, extra):
    from .harness import parse_value

    overrides = {k: parse_value(v) for k, v in _env_overrides(_dotted_overrides(extra)).items()}
    return make_model(name, **overrides)


def cmd_train(args, extra, reinforce=False):
    cfg = _build_config(args, extra)
    result = (train_reinforce if reinforce else train)(cfg)
    last = result.curve.row(len(result.curve) - 1)
    print(json.dumps({"run_dir": None if result.run_dir is None else str(result.run_dir),
                      "iteration": last[0], "interactions": last[1],
                      "mean_return": last[2], "stderr": last[3]}))


def cmd_evaluate(args, extra):
    model = _model_from_args(args.env, extra)
    res = evaluate_checkpoint(args.checkpoint, model, args.n_rollouts, stream(args.seed, 2),
                              n_belief=args.n_belief, deterministic=args.deterministic)
    if args.out:
        np.savez(args.out, **res.trajectory_arrays())
    print(json.dumps({"mean_return": res.mean_return, "stderr": res.stderr, "n_rollouts": args.n_rollouts}))


def cmd_smooth(args, extra):
    model = _model_from_args(args.env, extra)
    ck = load_checkpoint(args.checkpoint)
    if args.record:
        cfg = NestedSmcConfig(n_history=args.n_history, n_belief=args.n_belief, eta=args.eta)
        res = run_nested_filter(model, ck.policy, ck.params, cfg, stream(args.seed, 3))
        save_tape(res.tape, args.tape)
    tape = load_tape(args.tape, ck.policy, ck.params)
    draws = backward_sample(tape, model, ck.policy, ck.params, args.n_draws, mode=args.mode,
                            rng=stream(args.seed, 4))
    report = degeneracy_report(tape, draws)
    if args.out:
        batch = draws.to_batch()
        np.savez(args.out, indices=draws.indices, observations=batch.observations, actions=batch.actions)
    print(json.dumps({"n_fallbacks": draws.n_fallbacks, **report.as_dict()}))


def cmd_plotdata(args, extra):
    if extra:
        raise ConfigError(f"unexpected arguments {extra}")
    paths = emit_plotdata(args.run_dir, args.out)
    print(json.dumps({"written": [str(p) for p in paths]}))


def cmd_verify(args, extra):
    from .oracle import (enumerate_risk_gradient, enumerate_risk_objective, make_oracle_2x2x2,
                         verify_remark_decomposition)
    from .policy import TabularSoftmaxPolicy

    rng = stream(args.seed)
    ok = True
    for horizon in (1, 2):
        oracle = make_oracle_2x2x2(horizon)
        policy = TabularSoftmaxPolicy(oracle.n_obs, oracle.n_actions, horizon)
        params = rng.normal(size=policy.n_params)
        exact = enumerate_risk_gradient(oracle, policy, params, args.eta)
        fd = np.zeros_like(params)
        h = 1e-5
        for i in range(len(params)):
            e = np.zeros_like(params)
            e[i] = h
            fd[i] = (enumerate_risk_objective(oracle, policy, params + e, args.eta)
                     - enumerate_risk_objective(oracle, policy, params - e, args.eta)) / (2 * h)
        rel = float(np.max(np.abs(exact - fd)) / (1.0 + np.max(np.abs(exact))))
        grad_ok = rel <= 1e-8
        dec_ok = verify_remark_decomposition(oracle, policy, params, args.eta)
        ok &= grad_ok and dec_ok
        print(f"T={horizon} gradient identity: rel err {rel:.2e} {'PASS' if grad_ok else 'FAIL'}")
        print(f"T={horizon} posterior decomposition: {'PASS' if dec_ok else 'FAIL'}")
    if not ok:
        raise NumericFailure("oracle verification failed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="p3o", description="Particle-based POMDP policy optimisation")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("train", "train-reinforce"):
        p = sub.add_parser(name, help=f"{'REINFORCE baseline' if name != 'train' else 'risk-sensitive'} training")
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--out", help="run directory (overrides output_dir)")

    p = sub.add_parser("evaluate", help="roll out a checkpoint in the true environment")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--env", required=True)
    p.add_argument("--n-rollouts", type=int, default=1024)
    p.add_argument("--n-belief", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--out", help="write rollouts to this .npz file")

    p = sub.add_parser("smooth", help="backward sampling on a saved tape")
    p.add_argument("--tape", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--env", required=True)
    p.add_argument("--record", action="store_true", help="run the nested filter first and write the tape")
    p.add_argument("--n-history", type=int, default=128)
    p.add_argument("--n-belief", type=int, default=32)
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--n-draws", type=int, default=128)
    p.add_argument("--mode", choices=SMOOTHING_MODES, default="two-ancestor")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write draws to this .npz file")

    p = sub.add_parser("plotdata", help="write curve and trajectory tables for a run")
    p.add_argument("run_dir")
    p.add_argument("--out", help="output directory (defaults to the run directory)")

    p = sub.add_parser("verify", help="exact checks on the enumerable oracle model")
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {
        "train": lambda: cmd_train(args, extra),
        "train-reinforce": lambda: cmd_train(args, extra, reinforce=True),
        "evaluate": lambda: cmd_evaluate(args, extra),
        "smooth": lambda: cmd_smooth(args, extra),
        "plotdata": lambda: cmd_plotdata(args, extra),
        "verify": lambda: cmd_verify(args, extra),
    }
    try:
        handlers[args.command]()
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFailure as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (P3OError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_OTHER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

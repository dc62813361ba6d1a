"""Command-line interface: subcommands, overrides and exit codes."""
import json
import subprocess
import sys

import numpy as np
import pytest

from p3o.cli import EXIT_CONFIG, EXIT_OK, _dotted_overrides, main
from p3o.exceptions import ConfigError

SMALL = ["--env.name", "lightdark", "--env.horizon=4", "--eta", "0.1", "--train.iterations", "1",
         "--eval.n_rollouts", "8", "--eval.n_belief", "4", "--smc.n_history", "8", "--smc.n_belief", "4",
         "--policy.hidden", "8,", "--train.minibatches", "2", "--train.minibatch_size", "4"]


def _last_json(capsys):
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


def test_dotted_override_parsing():
    assert _dotted_overrides(["--a.b", "1", "--c=2"]) == {"a.b": "1", "c": "2"}
    with pytest.raises(ConfigError):
        _dotted_overrides(["--a"])
    with pytest.raises(ConfigError):
        _dotted_overrides(["stray"])


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli") / "run"
    assert main(["train", "--out", str(d)] + SMALL) == EXIT_OK
    return d


def test_train_then_evaluate_smooth_plotdata(run_dir, tmp_path, capsys):
    assert (run_dir / "checkpoint_latest.p3o").exists()
    ck = str(run_dir / "checkpoint_latest.p3o")
    out = tmp_path / "eval.npz"
    assert main(["evaluate", "--checkpoint", ck, "--env", "lightdark", "--n-rollouts", "5", "--n-belief", "4",
                 "--env.horizon", "4", "--out", str(out)]) == EXIT_OK
    res = _last_json(capsys)
    assert res["n_rollouts"] == 5
    assert np.load(out)["states"].shape == (5, 5, 2)
    tape = tmp_path / "tape.bin"
    assert main(["smooth", "--record", "--tape", str(tape), "--checkpoint", ck, "--env", "lightdark",
                 "--env.horizon", "4", "--n-history", "6", "--n-belief", "3", "--eta", "0.1", "--n-draws", "5",
                 "--mode", "full"]) == EXIT_OK
    rep = _last_json(capsys)
    assert rep["n_draws"] == 5 and len(rep["backward_unique"]) == 5
    assert main(["smooth", "--tape", str(tape), "--checkpoint", ck, "--env", "lightdark",
                 "--env.horizon", "4", "--n-draws", "3", "--out", str(tmp_path / "d.npz")]) == EXIT_OK
    assert np.load(tmp_path / "d.npz")["indices"].shape == (3, 5)
    assert main(["plotdata", str(run_dir)]) == EXIT_OK
    assert (run_dir / "plot_curve.tsv").exists()


def test_train_reinforce_with_config_file(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("""# small light-dark run
env.name=lightdark
env.horizon=4
eta=0.1
train.iterations=1
eval.n_rollouts=8
eval.n_belief=4
smc.n_history=8
smc.n_belief=4
policy.hidden=8,
train.minibatches=2
train.minibatch_size=4
""")
    assert main(["train-reinforce", "--config", str(cfg), "--train.baseline", "mean"]) == EXIT_OK
    assert _last_json(capsys)["run_dir"] is None


@pytest.mark.parametrize("argv", [
    ["train"] + SMALL + ["--eta", "-1"],
    ["train"] + SMALL + ["--smc.bogus", "3"],
    ["plotdata", "/nonexistent/run"],
    ["evaluate", "--checkpoint", "x", "--env", "atari"],
])
def test_configuration_errors_exit_2(argv, capsys):
    assert main(argv) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_verify_passes(capsys):
    assert main(["verify"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("PASS") == 4 and "FAIL" not in out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "p3o.cli", "plotdata", "/nonexistent"], capture_output=True)
    assert proc.returncode == EXIT_CONFIG

import json
import subprocess
import sys

import pytest

from odegp.cli import main

SMALL_CFG = """system = vdp
n_steps = 30
train_steps = 15
n_samples = 8
n_features = 32
iterations = 200
kind = AB
order = 2
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL_CFG)
    return p


def test_pipeline_subcommands(tmp_path, cfg, capsys):
    out = tmp_path / "run"
    args = ["--config", str(cfg), "--out", str(out)]
    assert main(["simulate", *args]) == 0
    assert (out / "data.csv").is_file()
    assert main(["train", *args]) == 0
    assert (out / "model.json").is_file()
    assert main(["rollout", *args]) == 0
    assert (out / "predictions.csv").is_file()
    assert main(["evaluate", *args]) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["label"] == "AB2"
    assert "MSE" in capsys.readouterr().out


def test_pipeline_matches_single_run(tmp_path, cfg):
    from odegp.experiment import load_config, run_experiment

    out = tmp_path / "run"
    for cmd in ("train", "rollout", "evaluate"):
        assert main([cmd, "--config", str(cfg), "--out", str(out)]) == 0
    direct = run_experiment(load_config(cfg), tmp_path / "direct")
    assert json.loads((out / "metrics.json").read_text())["mse"] == direct.mse


def test_seed_flag_changes_data(tmp_path, cfg):
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a"), "--seed", "1"])
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "2"])
    assert (tmp_path / "a" / "data.csv").read_text() != (tmp_path / "b" / "data.csv").read_text()


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("order = 7\n")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path)]) == 1
    assert main(["simulate", "--config", str(tmp_path / "missing.cfg")]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["train", "--seed", "x"]) == 1
    assert "config error" in capsys.readouterr().err


def test_rollout_without_model(tmp_path, cfg):
    assert main(["rollout", "--config", str(cfg), "--out", str(tmp_path / "empty")]) == 1


def test_rollout_with_other_scheme(tmp_path, cfg):
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    other = tmp_path / "other.cfg"
    other.write_text(SMALL_CFG.replace("kind = AB", "kind = BDF"))
    assert main(["rollout", "--config", str(other), "--out", str(out)]) == 1


def test_numeric_failure_exit_code(tmp_path, cfg, monkeypatch):
    import odegp.experiment
    from odegp.gpcore import FactorizationError

    def broken(*args, **kwargs):
        raise FactorizationError("not SPD")

    monkeypatch.setattr(odegp.experiment, "train", broken)
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_bound_subcommand(tmp_path, capsys):
    assert main(["bound", "--out", str(tmp_path)]) == 0
    text = capsys.readouterr().out
    assert "violations: 0 of 200" in text
    assert (tmp_path / "bound.csv").read_text().startswith("point,error,bound")


def test_suite_subcommand(tmp_path):
    suite = tmp_path / "suite.cfg"
    suite.write_text(SMALL_CFG + "cells = AB1, AM2\nseeds = 0\n")
    assert main(["suite", "--config", str(suite), "--out", str(tmp_path / "s")]) == 0
    table = (tmp_path / "s" / "table.csv").read_text().splitlines()
    assert [row.split(",")[0] for row in table[1:]] == ["AB1", "AM2"]
    assert main(["suite"]) == 1


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "odegp.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for name in ("simulate", "train", "rollout", "evaluate", "suite", "bound"):
        assert name in res.stdout

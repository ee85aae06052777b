import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from odegp.dynsys import TimeGrid, Trajectory
from odegp.experiment import (
    ConfigError,
    ExperimentConfig,
    NumericFailure,
    format_table,
    load_config,
    make_data,
    mse,
    parse_cells,
    parse_config_text,
    parse_seeds,
    rmse_over_time,
    run_experiment,
    run_suite,
)

SMALL = dict(system="vdp", n_steps=30, train_steps=15, n_samples=8, n_features=32, iterations=200)


def traj(values):
    values = np.asarray(values, dtype=float)
    return Trajectory(TimeGrid(np.arange(len(values), dtype=float)), values.reshape(len(values), -1))


def test_mse_hand_example():
    pred, ref = traj([1.0, 3.0]), traj([0.0, 0.0])
    assert mse(pred, ref) == 5.0
    np.testing.assert_array_equal(rmse_over_time(pred, ref), [1.0, 3.0])


def test_mse_identity_and_offset():
    ref = traj(np.random.default_rng(0).normal(size=(7, 2)))
    assert mse(ref, ref) == 0.0
    shifted = Trajectory(ref.grid, ref.states + 0.25)
    assert mse(shifted, ref) == pytest.approx(0.0625, rel=1e-12)


@given(a=hnp.arrays(float, (6, 3), elements=st.floats(-10, 10)), b=hnp.arrays(float, (6, 3), elements=st.floats(-10, 10)))
def test_rmse_over_time_consistent_with_mse(a, b):
    pa, pb = traj(a), traj(b)
    assert np.mean(rmse_over_time(pa, pb) ** 2) == pytest.approx(mse(pa, pb), rel=1e-12, abs=1e-12)


def test_mse_grid_mismatch():
    with pytest.raises(ValueError):
        mse(traj([1.0, 2.0]), traj([1.0, 2.0, 3.0]))


def test_config_parsing():
    cfg = parse_config_text("""
        # comment
        system = vdp
        kind = bdf
        order = 3
        x0 = 1.0, -0.5
        pretrain = false
        noise_sigma = 0.02   # trailing comment
    """)
    assert cfg.label == "BDF3"
    assert cfg.x0 == (1.0, -0.5)
    assert cfg.pretrain is False
    assert cfg.resolved_grid() == {"h": 0.1, "b": 0.5, "n_steps": 100, "train_steps": 50}
    assert parse_config_text(cfg.to_text()) == cfg


def test_config_seed_override(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("system = dho\nseed = 3\n")
    assert load_config(p).seed == 3
    assert load_config(p, seed=9).seed == 9


@pytest.mark.parametrize(
    "text",
    [
        "colour = blue",
        "order = 4",
        "order = three",
        "kind = RK",
        "noise_variant = banded",
        "system = lorenz",
        "system = csv:/does/not/exist.csv",
        "system = dho\ntrain_steps = 2000",
        "jitter = 0",
        "predict_mode = median",
        "no equals sign",
        "pretrain = maybe",
    ],
)
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.cfg")


def test_cells_and_seeds():
    assert parse_cells("AB1, bdf3,Taylor2") == [("AB", 1), ("BDF", 3), ("Taylor", 2)]
    assert parse_seeds("0, 1,2") == [0, 1, 2]
    for bad in ("AB", "XY2", ""):
        with pytest.raises(ConfigError):
            parse_cells(bad)
    with pytest.raises(ConfigError):
        parse_seeds("1,a")


def test_make_data_streams():
    cfg = ExperimentConfig(**SMALL)
    d1, d2 = make_data(cfg), make_data(cfg)
    np.testing.assert_array_equal(d1.observed.states, d2.observed.states)
    assert d1.n_train == 16 and len(d1.observed) == 31
    assert np.std(d1.observed.states - d1.reference.states) == pytest.approx(0.01, rel=0.3)
    other = make_data(ExperimentConfig(**SMALL, seed=1))
    assert not np.array_equal(other.observed.times, d1.observed.times)
    same_grid = make_data(ExperimentConfig(**SMALL, seed=1, grid_seed=0))
    np.testing.assert_array_equal(same_grid.observed.times, d1.observed.times)


def test_csv_system(tmp_path):
    from odegp.dynsys import save_csv

    data = make_data(ExperimentConfig(**SMALL))
    save_csv(data.observed, tmp_path / "d.csv")
    cfg = ExperimentConfig(system=f"csv:{tmp_path / 'd.csv'}", train_steps=15, n_samples=4, n_features=16,
                           iterations=100)
    loaded = make_data(cfg)
    np.testing.assert_array_equal(loaded.observed.states, data.observed.states)
    np.testing.assert_array_equal(loaded.reference.states, data.observed.states)


def test_run_experiment_artifacts_are_reproducible(tmp_path):
    cfg = ExperimentConfig(**SMALL, kind="AM", order=2)
    r1 = run_experiment(cfg, tmp_path / "a")
    r2 = run_experiment(cfg, tmp_path / "b")
    for name in ("metrics.json", "predictions.csv", "variance.csv", "rmse_over_time.csv", "model.json",
                 "data.csv", "reference.csv", "config.txt", "ensemble.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    assert r1.mse == r2.mse
    m = json.loads((tmp_path / "a" / "metrics.json").read_text())
    assert m["label"] == "AM2" and m["n_samples"] == 8
    rmse = np.loadtxt(tmp_path / "a" / "rmse_over_time.csv", delimiter=",", skiprows=1)[:, 1]
    assert np.mean(rmse**2) == pytest.approx(m["mse"], rel=1e-12)


@pytest.mark.parametrize("kind, order, integrator", [("Taylor", 2, "rk45"), ("Taylor", 2, "training"), ("BDF", 2, "training")])
def test_mean_mode_runs(kind, order, integrator):
    cfg = ExperimentConfig(**SMALL, kind=kind, order=order, predict_mode="mean", predict_integrator=integrator)
    rep = run_experiment(cfg)
    assert np.isfinite(rep.mse) and rep.n_samples == 1


def test_split_shorter_than_window():
    with pytest.raises(ConfigError):
        ExperimentConfig(**{**SMALL, "train_steps": 2}, kind="BDF", order=3)


def test_numeric_failure_carries_stage(monkeypatch):
    import odegp.experiment
    from odegp.gpcore import FactorizationError

    def broken(*args, **kwargs):
        raise FactorizationError("not SPD")

    monkeypatch.setattr(odegp.experiment, "train", broken)
    with pytest.raises(NumericFailure) as info:
        run_experiment(ExperimentConfig(**SMALL))
    assert info.value.stage == "train"


def test_suite_single_cell_matches_experiment(tmp_path):
    base = ExperimentConfig(**SMALL)
    table = run_suite(base, [("AB", 1)], [0], out=tmp_path)
    assert table[0].mses == [run_experiment(base).mse]
    assert (tmp_path / "table.csv").is_file()
    assert "AB1" in format_table(table)
    again = run_suite(base, [("AB", 1)], [0])
    assert again[0].mses == table[0].mses

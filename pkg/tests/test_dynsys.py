import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from odegp.dynsys import (
    HeaderError,
    RaggedRowError,
    TimeGrid,
    TimeOrderError,
    Trajectory,
    DynamicsField,
    add_noise,
    dho_rhs,
    irregular_grid,
    irregular_step,
    load_csv,
    regular_grid,
    save_csv,
    simulate_reference,
    vdp_rhs,
)

# classical RK4 with h = 1e-4 from (2, 0) to t = 10 (scripts/oracles.py)
VDP_T10_RK4 = (-1.851584141604284, 0.6345842135367918)


@pytest.mark.parametrize(
    "state, expected",
    [((0, 0), (0, 0)), ((1, 1), (1.9, -2.1)), ((2, 0), (-0.8, -16.0))],
)
def test_dho_rhs_values(state, expected):
    np.testing.assert_allclose(dho_rhs(state), expected, rtol=1e-14)


@pytest.mark.parametrize(
    "state, expected",
    [((0, 0), (0, 0)), ((1, 1), (1, -1)), ((2, 1), (1, -3.5))],
)
def test_vdp_rhs_values(state, expected):
    np.testing.assert_allclose(vdp_rhs(state), expected, rtol=1e-14)


def test_rhs_vectorised_over_batches(rng):
    X = rng.normal(size=(5, 3, 2))
    out = vdp_rhs(X)
    assert out.shape == X.shape
    np.testing.assert_array_equal(out[2, 1], vdp_rhs(X[2, 1]))


@pytest.mark.parametrize("w, step", [(0.5, 0.1), (1.0, 0.125), (0.0, 0.075)])
def test_irregular_step_formula(w, step):
    assert irregular_step(0.1, 0.5, w) == pytest.approx(step, rel=1e-14)


def test_irregular_grid_rejects_large_b():
    with pytest.raises(ValueError):
        irregular_grid(0.0, 10, 0.1, 2.0, seed=0)


@given(b=st.floats(0.0, 1.99), h=st.floats(1e-3, 1.0), seed=st.integers(0, 2**31))
def test_irregular_steps_within_range(b, h, seed):
    g = irregular_grid(0.0, 50, h, b, seed)
    steps = g.steps
    assert np.all(steps >= h * (1 - b / 2) * (1 - 1e-12))
    assert np.all(steps <= h * (1 + b / 2) * (1 + 1e-12))


def test_irregular_mean_step():
    g = irregular_grid(0.0, 10_000, 0.1, 0.5, seed=1)
    assert abs(g.steps.mean() - 0.1) < 0.001


def test_irregular_grid_deterministic():
    a = irregular_grid(0.0, 20, 0.1, 0.5, seed=7)
    b = irregular_grid(0.0, 20, 0.1, 0.5, seed=7)
    np.testing.assert_array_equal(a.times, b.times)


def test_time_grid_validation():
    with pytest.raises(TimeOrderError):
        TimeGrid([0.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        TimeGrid([0.0])


def test_simulate_zero_field():
    zero = DynamicsField(lambda x: np.zeros_like(x), 2)
    traj = simulate_reference(zero, (1.0, 1.0), irregular_grid(0, 15, 0.1, 0.3, 0))
    np.testing.assert_array_equal(traj.states, np.ones((16, 2)))
    assert not traj.noisy


def test_simulate_exponential():
    traj = simulate_reference(lambda x: x, [1.0], TimeGrid([0.0, 0.5, 1.0]), rtol=1e-10)
    assert traj.states[-1, 0] == pytest.approx(2.718281828459045, rel=1e-9)


def test_simulate_linear_system_matches_matrix_exponential():
    import scipy.linalg

    A = np.array([[-0.1, 2.0], [-2.0, -0.1]])
    grid = regular_grid(0.0, 20, 0.25)
    rtol = 1e-8
    traj = simulate_reference(lambda x: x @ A.T, (1.0, 0.5), grid, rtol=rtol, atol=1e-12)
    exact = np.array([scipy.linalg.expm(A * t) @ [1.0, 0.5] for t in grid.times])
    assert np.max(np.abs(traj.states - exact)) <= 10 * rtol * np.max(np.abs(exact))


def test_simulate_vdp_matches_dense_rk4():
    traj = simulate_reference(vdp_rhs, (2.0, 0.0), TimeGrid([0.0, 10.0]))
    np.testing.assert_allclose(traj.states[-1], VDP_T10_RK4, atol=1e-4)


def test_add_noise_zero_sigma_identity(dho_short):
    out = add_noise(dho_short, 0.0, seed=0)
    np.testing.assert_array_equal(out.states, dho_short.states)
    assert out.noisy


def test_add_noise_statistics():
    grid = regular_grid(0.0, 100_000 - 1, 1.0)
    traj = Trajectory(grid, np.ones((100_000, 2)))
    noisy = add_noise(traj, (0.1, 0.1), seed=3)
    std = (noisy.states - 1.0).std(axis=0)
    np.testing.assert_allclose(std, 0.1, rtol=0.02)
    np.testing.assert_array_equal(noisy.times, traj.times)
    assert noisy.states.shape == traj.states.shape


def test_add_noise_seeds_differ(dho_short):
    a = add_noise(dho_short, 0.1, seed=1)
    b = add_noise(dho_short, 0.1, seed=2)
    assert not np.array_equal(a.states, b.states)


def test_csv_round_trip(tmp_path, rng):
    t = np.cumsum(rng.uniform(0.01, 1.0, 25))
    traj = Trajectory(TimeGrid(t), rng.normal(size=(25, 3)) * 10.0 ** rng.integers(-8, 8, (25, 3)))
    save_csv(traj, tmp_path / "x.csv")
    back = load_csv(tmp_path / "x.csv")
    np.testing.assert_array_equal(back.times, traj.times)
    np.testing.assert_array_equal(back.states, traj.states)


def test_csv_parse_small(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("t,x1,x2\n0,1,2\n0.5,3,4\n1,5,6\n")
    traj = load_csv(p)
    assert len(traj) == 3 and traj.dim == 2


@pytest.mark.parametrize(
    "text, error",
    [
        ("time,x1\n0,1\n1,2\n", HeaderError),
        ("t,x1\n0,1\n1,2,3\n", RaggedRowError),
        ("t,x1\n1,1\n0,2\n", TimeOrderError),
    ],
)
def test_csv_errors_are_distinct(tmp_path, text, error):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(error):
        load_csv(p)


import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from odegp.dynsys import TimeGrid, irregular_grid, regular_grid
from odegp.mscoef import (
    SchemeKind,
    SingularWindowError,
    consistency_residual,
    dump_scheme_csv,
    generate_scheme,
    is_explicit,
    local_error_weights,
    steps_for,
    textbook_coefficients,
    verify_consistency,
)

ALL_SCHEMES = [(k, p) for k in ("AB", "AM", "BDF") for p in (1, 2, 3)]

# exact rational solutions of the order conditions (scripts/oracles.py)
EXACT = {
    ("AB", 2): ([0, -1, 1], [-1 / 2, 3 / 2, 0]),
    ("AB", 3): ([0, 0, -1, 1], [5 / 12, -4 / 3, 23 / 12, 0]),
    ("AM", 3): ([0, -1, 1], [-1 / 12, 2 / 3, 5 / 12]),
    ("BDF", 2): ([1 / 3, -4 / 3, 1], [0, 0, 2 / 3]),
    ("BDF", 3): ([-2 / 11, 9 / 11, -18 / 11, 1], [0, 0, 0, 6 / 11]),
}


def grids(min_points=8):
    @st.composite
    def build(draw):
        n = draw(st.integers(min_points, 20))
        steps = draw(st.lists(st.floats(0.02, 0.5), min_size=n - 1, max_size=n - 1))
        t0 = draw(st.floats(-5.0, 5.0))
        return TimeGrid(t0 + np.concatenate([[0.0], np.cumsum(steps)]))

    return build()


@pytest.mark.parametrize("key", sorted(EXACT))
def test_uniform_grid_matches_exact_coefficients(key):
    s = generate_scheme(*key, regular_grid(0.0, 10, 1.0))
    a, b = EXACT[key]
    np.testing.assert_allclose(s.a, np.tile(a, (s.n_rows, 1)), atol=1e-12)
    np.testing.assert_allclose(s.b, np.tile(b, (s.n_rows, 1)), atol=1e-12)


@pytest.mark.parametrize("kind, order", ALL_SCHEMES)
@pytest.mark.parametrize("h", [0.01, 0.1, 1.0])
def test_uniform_grid_matches_textbook(kind, order, h):
    s = generate_scheme(kind, order, regular_grid(0.0, 12, h))
    a, b = textbook_coefficients(kind, order, h)
    np.testing.assert_allclose(s.a, np.tile(a, (s.n_rows, 1)), atol=1e-12)
    np.testing.assert_allclose(s.b, np.tile(b, (s.n_rows, 1)), atol=1e-12 * max(1.0, h))


def test_steps_table():
    assert [steps_for(k, p) for k, p in ALL_SCHEMES] == [1, 2, 3, 1, 1, 2, 1, 2, 3]


def test_scheme_kind_parse():
    assert SchemeKind.parse("bdf") is SchemeKind.BDF
    with pytest.raises(ValueError):
        SchemeKind.parse("RK")


@pytest.mark.parametrize("kind, order", ALL_SCHEMES)
def test_consistency_on_irregular_grid(kind, order):
    g = irregular_grid(0.0, 40, 0.1, 1.5, seed=11)
    s = generate_scheme(kind, order, g)
    assert s.a.shape == (40 + 1 - s.steps, s.steps + 1)
    assert verify_consistency(s) < 1e-9


@given(grid=grids(), scheme=st.sampled_from(ALL_SCHEMES))
def test_consistency_property(grid, scheme):
    s = generate_scheme(*scheme, grid)
    assert verify_consistency(s) < 1e-9
    np.testing.assert_allclose(s.a.sum(axis=1), 0.0, atol=1e-12)
    assert np.all(s.a[:, -1] == 1.0)


def test_order_is_sharp():
    s = generate_scheme("AB", 2, irregular_grid(0.0, 20, 0.1, 0.5, seed=2))
    assert verify_consistency(s) < 1e-9
    assert consistency_residual(s, degree=3).min() > 1e-3


@given(grid=grids(), scheme=st.sampled_from(ALL_SCHEMES), shift=st.floats(-100, 100), scale=st.floats(0.1, 10))
def test_translation_and_dilation(grid, scheme, shift, scale):
    base = generate_scheme(*scheme, grid)
    moved = generate_scheme(*scheme, TimeGrid(grid.times * scale + shift))
    np.testing.assert_allclose(moved.a, base.a, atol=1e-8)
    np.testing.assert_allclose(moved.b, base.b * scale, atol=1e-8 * scale)


@pytest.mark.parametrize("kind, order", ALL_SCHEMES)
def test_explicitness(kind, order):
    s = generate_scheme(kind, order, irregular_grid(0.0, 10, 0.1, 0.5, seed=0))
    assert is_explicit(s) == (kind == "AB")
    if kind == "BDF":
        assert np.all(s.b[:, :-1] == 0.0)
    if kind in ("AB", "AM"):
        assert np.all(s.a[:, :-2] == 0.0)
        assert np.all(s.a[:, -2] == -1.0)


def test_rows_depend_only_on_window():
    t = np.array([0.0, 0.1, 0.25, 0.3, 0.42, 0.6])
    full = generate_scheme("BDF", 3, TimeGrid(t))
    tail = generate_scheme("BDF", 3, TimeGrid(t[2:]))
    np.testing.assert_allclose(full.b[2], tail.b[0], atol=1e-14)


def test_too_few_points():
    with pytest.raises(ValueError):
        generate_scheme("AB", 3, regular_grid(0.0, 2, 0.1))


def test_singular_window_rejected():
    # equal stamps make the order conditions singular
    t = TimeGrid.__new__(TimeGrid)
    object.__setattr__(t, "times", np.array([0.0, 1.0, 1.0, 2.0]))
    with pytest.raises(SingularWindowError):
        generate_scheme("BDF", 3, t)


def test_local_error_weights():
    s = generate_scheme("AB", 1, regular_grid(0.0, 5, 0.1))
    np.testing.assert_allclose(local_error_weights(s), 2.1)


def test_dump_csv(tmp_path):
    s = generate_scheme("AM", 2, regular_grid(0.0, 3, 0.5))
    dump_scheme_csv(s, tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "n,a0,a1,b0,b1"
    assert len(lines) == 1 + s.n_rows

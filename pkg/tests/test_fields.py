import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fluxbound.errors import GridMismatch, ParameterError
from fluxbound.fields import (Domain, Grid, ScalarField, VectorField, dump_csv, l2_inner,
                              load_csv, load_field, project_mean_free, save_field)


def test_grid_geometry():
    g = Grid(Domain.symmetric_box(), 16, 8)
    assert g.hx == pytest.approx(2 / 16)
    assert g.x[0] == pytest.approx(-1 + 1 / 16)
    X, Y = g.mesh()
    assert X.shape == (16, 8) and Y.shape == (16, 8)
    assert Domain.periodic_box().area == pytest.approx(4 * np.pi ** 2)


@pytest.mark.parametrize("n", [4, 7, 8.5])
def test_grid_rejects_small_or_fractional(n):
    with pytest.raises(ParameterError):
        Grid(Domain.periodic_box(), n, 16)


def test_scalar_field_checks():
    g = Grid(Domain.periodic_box(), 8, 8)
    with pytest.raises(GridMismatch):
        ScalarField(g, np.zeros((8, 9)))
    with pytest.raises(ParameterError):
        ScalarField(g, np.full((8, 8), np.nan))
    f = ScalarField(g, np.ones((8, 8)))
    with pytest.raises(ValueError):
        f.values[0, 0] = 2.0
    other = Grid(Domain.symmetric_box(), 8, 8).zeros()
    with pytest.raises(GridMismatch):
        f + other


def test_mean_free_projection():
    g = Grid(Domain.periodic_box(), 16, 16)
    f = g.sample(lambda x, y: 3.0 + np.sin(x) * np.cos(2 * y) + x)
    p = project_mean_free(f)
    assert abs(p.average()) < 1e-15
    assert p.is_mean_free()
    np.testing.assert_allclose(p.values, f.values - f.values.mean(), atol=1e-13)


def test_vector_field_arithmetic():
    g = Grid(Domain.periodic_box(), 8, 8)
    u = VectorField.from_arrays(g, np.ones((8, 8)), 2 * np.ones((8, 8)))
    assert u.norm_sq_average() == pytest.approx(5.0)
    assert (2 * u).norm_sq_average() == pytest.approx(20.0)
    assert (u + (-u)).max_abs() == 0.0


@settings(max_examples=30, deadline=None)
@given(nx=st.integers(8, 20), ny=st.integers(8, 20), seed=st.integers(0, 10 ** 6),
       scale=st.floats(1e-300, 1e300))
def test_csv_round_trip_is_bit_identical(nx, ny, seed, scale):
    g = Grid(Domain(-1.5, 0.25, 0.1, 3.0), nx, ny)
    vals = np.random.default_rng(seed).standard_normal((nx, ny)) * scale
    f = ScalarField(g, vals)
    back = load_csv(dump_csv(f))
    assert back.grid == g
    assert np.array_equal(back.values, f.values)


def test_file_round_trip(tmp_path):
    g = Grid(Domain.periodic_box(), 12, 9)
    f = g.sample(lambda x, y: np.exp(np.sin(x)) * y)
    save_field(tmp_path / "f.csv", f)
    assert np.array_equal(load_field(tmp_path / "f.csv").values, f.values)


@pytest.mark.parametrize("text", ["", "1,2\n", "# 8,8,0,1,0,1\n1,2\n", "# 8,8,0,1\n"])
def test_load_csv_rejects_malformed(text):
    with pytest.raises(ParameterError):
        load_csv(text)


def test_l2_inner_symmetric():
    g = Grid(Domain.periodic_box(), 10, 10)
    a = g.sample(lambda x, y: np.sin(x) + y)
    b = g.sample(lambda x, y: np.cos(y) * x)
    assert l2_inner(a, b) == pytest.approx(l2_inner(b, a))

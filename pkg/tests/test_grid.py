import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from skortight.grid import (
    Kernel,
    TimeGrid,
    indicator,
    kernel_inner,
    kernel_norm,
    make_grid,
    path_from_increments,
    sample_path,
    wiener_integral,
    zero_kernel,
)
from skortight.rng import RngStream


def test_make_grid_examples():
    assert np.array_equal(make_grid(1).knots, [0.0, 1.0])
    assert np.array_equal(make_grid(4).knots, [0, 0.25, 0.5, 0.75, 1])
    with pytest.raises(ValueError):
        make_grid(0)


@pytest.mark.parametrize("knots", [[0.0, 0.5], [0.1, 1.0], [0.0, 0.6, 0.4, 1.0], [0.0]])
def test_grid_invariants_rejected(knots):
    with pytest.raises(ValueError):
        TimeGrid(np.array(knots), uniform=False)


def test_inner_products():
    g = make_grid(4)
    one = indicator(g)
    assert kernel_inner(one, one) == 1.0
    assert kernel_inner(one, zero_kernel(g)) == 0.0
    assert kernel_norm(zero_kernel(g)) == 0.0
    # overlap length of [0, 0.5] and [0.25, 1]
    assert kernel_inner(indicator(g, 0, 0.5), indicator(g, 0.25, 1.0)) == pytest.approx(0.25, abs=1e-15)


def test_indicator_off_grid_is_cell_average():
    g = make_grid(2)
    h = indicator(g, 0.0, 0.25)
    assert np.allclose(h.values[:, 0], [0.5, 0.0])
    assert h.integral()[0] == pytest.approx(0.25)


def test_mismatch_errors():
    a, b = make_grid(2), make_grid(3)
    with pytest.raises(ValueError):
        kernel_inner(indicator(a), indicator(b))
    with pytest.raises(ValueError):
        kernel_inner(indicator(a, dim=2), indicator(a))
    path = sample_path(a, 1, RngStream(0))
    with pytest.raises(ValueError):
        wiener_integral(path, indicator(b))


def test_wiener_integral_examples():
    g = make_grid(8)
    path = sample_path(g, 1, RngStream(3))
    assert wiener_integral(path, zero_kernel(g)) == 0.0
    assert wiener_integral(path, indicator(g)) == pytest.approx(path.terminal()[0], abs=1e-15)
    kv = path.knot_values()
    assert kv[0, 0] == 0.0 and kv[-1, 0] == pytest.approx(path.terminal()[0])


@settings(max_examples=40, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 2**32))
def test_wiener_linearity(a, b, seed):
    g = make_grid(6)
    rng = np.random.default_rng(seed)
    h = Kernel(g, rng.normal(size=(6, 2)))
    k = Kernel(g, rng.normal(size=(6, 2)))
    path = sample_path(g, 2, RngStream(seed % 1000))
    lhs = wiener_integral(path, a * h + b * k)
    rhs = a * wiener_integral(path, h) + b * wiener_integral(path, k)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_increment_moments():
    g = make_grid(5)
    paths = sample_path(g, 2, RngStream(11), n=100_000)
    inc = paths.increments
    se = np.sqrt(g.dt / 100_000)[:, None]
    assert np.all(np.abs(inc.mean(axis=0)) < 4 * se)
    assert np.allclose(inc.var(axis=0), g.dt[:, None], rtol=0.05)


def test_isometry_statistical():
    g = make_grid(4)
    h = indicator(g, 0, 0.75) - indicator(g, 0.5, 1.0)
    k = indicator(g, 0.25, 1.0)
    paths = sample_path(g, 1, RngStream(2), n=100_000)
    x, y = wiener_integral(paths, h), wiener_integral(paths, k)
    assert x.var() == pytest.approx(kernel_inner(h, h), rel=0.05)
    prod = x * y
    assert abs(prod.mean() - kernel_inner(h, k)) < 4 * prod.std() / np.sqrt(prod.size)


def test_refine_preserves_cell_sums_and_law():
    g = make_grid(4)
    paths = sample_path(g, 1, RngStream(1), n=50_000)
    fine = paths.refine(RngStream(99))
    assert fine.grid.n_cells == 8
    assert np.allclose(fine.coarsen(2).increments, paths.increments, rtol=0, atol=1e-15)
    assert np.allclose(fine.increments.var(axis=0)[:, 0], fine.grid.dt, rtol=0.05)
    assert np.allclose(fine.grid.knots, make_grid(8).knots)


def test_single_path_refine_is_deterministic():
    g = make_grid(3)
    p = sample_path(g, 2, RngStream(4), start=17)
    assert np.array_equal(p.refine(RngStream(5)).increments, p.refine(RngStream(5)).increments)


def test_path_from_increments_and_coarsen():
    g = make_grid(4)
    p = path_from_increments(g, [0.1, -0.2, 0.3, 0.4])
    assert p.terminal()[0] == pytest.approx(0.6)
    assert np.allclose(p.coarsen(2).increments[:, 0], [-0.1, 0.7])
    with pytest.raises(ValueError):
        p.coarsen(3)
    with pytest.raises(ValueError):
        sample_path(g, 0, RngStream(0))

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from skortight.grid import BrownianPath, Kernel, indicator, kernel_norm, make_grid, path_from_increments, sample_path
from skortight.malliavin import apply, constant, eval_functional, wiener
from skortight.rng import RngStream
from skortight.skorohod import (
    StepIntegrand,
    duality_residual,
    h_inner,
    ito_integral,
    sample_integrals,
    skorohod_integral,
)
from skortight.suites import adapted_suite, duality_pairs
from skortight.tightness import thm1_integrand


def _shift(path: BrownianPath, h: Kernel, t: float) -> BrownianPath:
    """Cameron–Martin shift ω -> ω + t∫h."""
    return BrownianPath(path.grid, path.increments + t * h.values * path.grid.dt[:, None])


def test_deterministic_integrand_is_wiener_integral():
    g = make_grid(4)
    h = indicator(g, 0, 0.5) - 2.0 * indicator(g, 0.5, 0.75)
    path = sample_path(g, 1, RngStream(0))
    r = skorohod_integral(StepIntegrand.deterministic(h), path)
    assert r.trace_part == 0.0
    assert r.value == pytest.approx(float(np.sum(h.values * path.increments)), abs=1e-15)


def test_thm1_example_value():
    path = path_from_increments(make_grid(1), [0.5])
    r = skorohod_integral(thm1_integrand(), path)
    # 0.5^0.75·0.5 − 0.75·0.5^(−1/4) simplifies to −0.5^0.75
    assert r.value == pytest.approx(0.5**0.75 * 0.5 - 0.75 * 0.5**-0.25, rel=1e-15)
    assert r.value == pytest.approx(-(0.5**0.75), rel=1e-14)
    assert r.value == pytest.approx(-0.594598, abs=1e-5)


def test_trace_matches_cameron_martin_difference():
    g = make_grid(4)
    F = apply("tanh", indicator(g, 0.5, 1.0)) * apply("sin", indicator(g, 0.0, 0.75))
    h = indicator(g, 0.0, 0.5) + 0.3 * indicator(g, 0.25, 1.0)
    u = StepIntegrand.product(F, h)
    assert not u.adapted
    for i in range(5):
        path = sample_path(g, 1, RngStream(8), start=i)
        t = 1e-6
        fd = (eval_functional(F, _shift(path, h, t)) - eval_functional(F, _shift(path, h, -t))) / (2 * t)
        r = skorohod_integral(u, path)
        assert r.trace_part == pytest.approx(fd, rel=1e-7, abs=1e-9)
        assert r.value == pytest.approx(r.ito_part - r.trace_part, abs=0)


def test_adapted_running_wiener_is_left_point_sum():
    g = make_grid(8)
    u = adapted_suite(8)["running_wiener"]
    paths = sample_path(g, 1, RngStream(1), n=100)
    r = skorohod_integral(u, paths)
    left = paths.left_values()[..., 0]
    ito = np.sum(left * paths.increments[..., 0], axis=-1)
    assert np.array_equal(r.trace_part, np.zeros(100))
    assert np.allclose(r.value, ito, rtol=0, atol=1e-14)
    assert np.array_equal(r.value, ito_integral(u, paths))


def test_ito_integral_examples():
    g = make_grid(5)
    path = sample_path(g, 1, RngStream(2))
    one = StepIntegrand.deterministic(indicator(g))
    assert ito_integral(one, path) == pytest.approx(path.terminal()[0], abs=1e-15)
    zero = StepIntegrand.deterministic(0.0 * indicator(g))
    assert ito_integral(zero, path) == 0.0
    with pytest.raises(ValueError):
        ito_integral(thm1_integrand(g), path)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), start=st.integers(0, 10_000))
def test_linearity(a, b, start):
    g = make_grid(4)
    u = thm1_integrand(g)
    v = StepIntegrand.product(apply("cos", indicator(g, 0.5, 1.0)), indicator(g, 0.0, 0.5))
    path = sample_path(g, 1, RngStream(3), start=start)
    lhs = skorohod_integral(a * u + b * v, path).value
    rhs = a * skorohod_integral(u, path).value + b * skorohod_integral(v, path).value
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_closed_form_pathwise():
    g = make_grid(1)
    paths = sample_path(g, 1, RngStream(4), n=1000)
    z = paths.terminal()[:, 0]
    f = np.clip(z, 0, 1) ** 0.75
    fp = np.where((z > 0) & (z < 1), 0.75 * np.abs(z) ** -0.25, 0.0)
    assert np.allclose(skorohod_integral(thm1_integrand(g), paths).value, f * z - fp, rtol=1e-15, atol=1e-15)


def test_gaussian_law_deterministic():
    g = make_grid(4)
    h = indicator(g, 0.0, 0.75) + indicator(g, 0.5, 1.0)
    x = sample_integrals(StepIntegrand.deterministic(h), 100_000, RngStream(5))
    assert stats.kstest(x, "norm", args=(0, float(kernel_norm(h)))).pvalue > 0.01


def test_duality_trivial_examples():
    g = make_grid(4)
    one = indicator(g)
    r = duality_residual(wiener(one), StepIntegrand.deterministic(one), 20_000, RngStream(6))
    assert abs(r.lhs - 1.0) < 4 * r.lhs_stderr and r.rhs == 1.0
    r = duality_residual(constant(5.0, g), thm1_integrand(g), 20_000, RngStream(7))
    assert r.rhs == 0.0 and r.rhs_stderr == 0.0 and abs(r.z_score) < 3
    with pytest.raises(ValueError):
        duality_residual(constant(1.0, g), thm1_integrand(g), 99, RngStream(0))


@pytest.mark.parametrize("seed", [10, 11, 12])
def test_duality_suite(seed):
    for j, (F, u) in enumerate(duality_pairs(4).values()):
        r = duality_residual(F, u, 20_000, RngStream(seed).child(j))
        assert abs(r.z_score) <= 3.5, (j, r)
        assert r.residual == pytest.approx(r.lhs - r.rhs, abs=1e-12)


def test_derivative_tensor_against_functionals():
    g = make_grid(4)
    u = StepIntegrand.product(apply("sin", indicator(g, 0.0, 0.5)), indicator(g, 0.25, 1.0))
    path = sample_path(g, 1, RngStream(9))
    D = u.derivative(path)
    assert D.shape == (4, 1, 4, 1)
    w = float(np.sum(indicator(g, 0, 0.5).values * path.increments))
    expected = np.einsum("ik,jl->ikjl", indicator(g, 0.25, 1.0).values,
                         math.cos(w) * indicator(g, 0, 0.5).values)
    assert np.allclose(D, expected, rtol=1e-15)
    assert u.second_derivative(path).shape == (4, 1, 4, 1, 4, 1)


def test_adapted_flag_and_h_inner():
    g = make_grid(4)
    assert all(u.adapted for u in adapted_suite(4).values())
    assert not thm1_integrand(g).adapted
    past = StepIntegrand.product(apply("sin", indicator(g, 0, 0.5)), indicator(g, 0.5, 1.0))
    assert past.adapted
    path = sample_path(g, 1, RngStream(0))
    one = indicator(g)
    assert h_inner(StepIntegrand.deterministic(one), path, one) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        StepIntegrand([])

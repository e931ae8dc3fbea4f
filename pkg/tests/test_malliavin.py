import numpy as np
import pytest

from skortight.grid import indicator, make_grid, path_from_increments, sample_path
from skortight.malliavin import (
    CylindricalFunctional,
    apply,
    constant,
    derivative,
    eval_functional,
    second_derivative,
    value_and_grad,
    wiener,
)
from skortight.rng import RngStream
from skortight.smooth import REGISTRY, SmoothMap, Var, exp

G = make_grid(4)


def _path_with_terminal(z, n=4):
    return path_from_increments(make_grid(n), np.full(n, z / n))


def test_eval_examples():
    path = sample_path(G, 1, RngStream(0))
    assert eval_functional(constant(3.0, G), path) == 3.0
    one = indicator(G)
    f = apply("thm1_f", one)
    assert eval_functional(f, _path_with_terminal(0.5)) == pytest.approx(0.5**0.75, rel=1e-14)
    assert eval_functional(f, _path_with_terminal(2.0)) == 1.0


def test_derivative_examples():
    path = sample_path(G, 1, RngStream(1))
    h = indicator(G, 0.0, 0.75) - 0.5 * indicator(G, 0.5, 1.0)
    assert np.array_equal(derivative(wiener(h), path).values, h.values)
    Dsq = derivative(wiener(h) * wiener(h), path).values
    w = float(np.sum(h.values * path.increments))
    assert np.allclose(Dsq, 2 * w * h.values, rtol=1e-14)
    one = indicator(G)
    Df = derivative(apply("thm1_f", one), _path_with_terminal(0.5)).values
    # 0.75·0.5^(-1/4) = 0.8919053 (a 6-digit rounding of it reads 0.891905)
    assert np.allclose(Df, 0.75 * 0.5**-0.25)
    assert Df[0, 0] == pytest.approx(0.891905, abs=1e-6)
    assert np.array_equal(derivative(constant(1.0, G), path).values, np.zeros((4, 1)))


def test_second_derivative_examples():
    path = sample_path(G, 1, RngStream(2))
    h = indicator(G, 0.25, 1.0)
    hh = np.einsum("ik,jl->ikjl", h.values, h.values)
    assert np.array_equal(second_derivative(wiener(h), path).values, np.zeros_like(hh))
    assert np.allclose(second_derivative(wiener(h) * wiener(h), path).values, 2 * hh)
    zero = path_from_increments(G, np.zeros(4))
    assert np.allclose(second_derivative(apply("exp", h), zero).values, hh)
    assert second_derivative(apply("exp", h), zero).norm() == pytest.approx(0.75)


def test_hessian_symmetry_multi_kernel():
    g = make_grid(6)
    ks = [indicator(g, 0, 0.5, 2, 0), indicator(g, 0.3, 1.0, 2, 1), indicator(g, 0.1, 0.9, 2, 0)]
    m = SmoothMap(Var(0) * Var(1) ** 2 + exp(Var(2) * Var(0)), 3)
    F = CylindricalFunctional(m, ks)
    paths = sample_path(g, 2, RngStream(3), n=20)
    D2 = second_derivative(F, paths).values
    assert np.array_equal(D2, np.transpose(D2, (0, 3, 4, 1, 2)))


@pytest.mark.parametrize("a,b", [("sin", "exp"), ("square", "tanh"), ("cos", "identity"),
                                 ("thm1_f", "sin")])
def test_product_rule(a, b):
    g = make_grid(4)
    F = apply(a, indicator(g, 0.0, 0.75))
    Gf = apply(b, indicator(g, 0.25, 1.0))
    paths = sample_path(g, 1, RngStream(4), n=50)
    lhs = derivative(F * Gf, paths).values
    fv, gv = eval_functional(F, paths), eval_functional(Gf, paths)
    rhs = fv[:, None, None] * derivative(Gf, paths).values + gv[:, None, None] * derivative(F, paths).values
    assert np.allclose(lhs, rhs, rtol=1e-13, atol=1e-14)


def test_batched_derivative_equals_loop():
    g = make_grid(3)
    F = apply("tanh", indicator(g, 0, 0.5)) + wiener(indicator(g, 0.5, 1.0)) * 2.0
    paths = sample_path(g, 1, RngStream(5), n=7)
    batched = derivative(F, paths).values
    for i in range(7):
        single = sample_path(g, 1, RngStream(5), start=i)
        assert np.allclose(derivative(F, single).values, batched[i], rtol=0, atol=1e-15)


def test_errors_and_helpers():
    with pytest.raises(ValueError):
        CylindricalFunctional(SmoothMap(Var(0), 1), [])
    with pytest.raises(ValueError):
        CylindricalFunctional(REGISTRY["sin"](), [indicator(G), indicator(G)])  # arity 1, two kernels
    with pytest.raises(ValueError):
        wiener(indicator(G)) + wiener(indicator(make_grid(2)))
    F = apply("sin", indicator(G))
    v, gr = value_and_grad(F, _path_with_terminal(0.3))
    assert v == pytest.approx(np.sin(0.3)) and gr[0] == pytest.approx(np.cos(0.3))
    assert F.support_end() == 1.0 and constant(1.0, G).support_end() == 0.0
    assert apply("sin", indicator(G, 0, 0.5)).support_end() == 0.5

import math

import numpy as np
import pytest
from scipy import integrate, optimize, stats
from scipy.special import ndtr

from skortight.grid import indicator, kernel_norm, make_grid, path_from_increments, sample_path
from skortight.rng import RngStream
from skortight.skorohod import skorohod_integral
from skortight.tightness import (
    FamilySpec,
    LangevinIntegrand,
    app_decompose,
    bounded_adapted,
    bounded_adapted_integrand,
    clopper_pearson,
    counterexample,
    deterministic_gaussian,
    gaussian_tail,
    langevin_app,
    langevin_cylindrical,
    langevin_variance_closed_form,
    sample_F,
    schilder_bound,
    schilder_bound_check,
    speed_scan,
    tail_curve,
    tail_mc,
    tail_quadrature,
    thm1_closed_form,
    thm1_tail,
    weight_bound_check,
    weight_bound_exact,
)

PARAMS = {"kappa0": 1.0, "a": 0.5, "sigma": 1.0, "x0": 0.0}


def _psi(z, eps):
    return float(thm1_closed_form(np.array([z]), eps)[0])


def _thm1_tail_oracle(eps, L):
    """Independent tail by bisection on ψ in the original variable."""
    c = L / math.sqrt(eps)
    # near 0: ψ/√ε = z^{7/4} - 0.75 z^{-1/4} decreases to -∞
    z1 = optimize.bisect(lambda z: _psi(z, eps) / math.sqrt(eps) + c, 1e-300, 1.0 - 1e-15,
                         xtol=1e-300, rtol=1e-15, maxiter=5000)
    mass = ndtr(z1) - 0.5
    if c < 0.25:
        z2 = optimize.bisect(lambda z: _psi(z, eps) / math.sqrt(eps) - c, z1, 1.0, rtol=1e-15)
        mass += ndtr(1.0) - ndtr(z2)
    return mass + ndtr(-max(1.0, c))


def test_closed_form_examples():
    assert thm1_closed_form(0.5, 0.04) == pytest.approx(0.2 * (0.5**1.75 - 0.75 * 0.5**-0.25), rel=1e-14)
    assert thm1_closed_form(0.5, 0.04) == pytest.approx(-0.118920, abs=1e-6)
    assert np.all(thm1_closed_form(np.array([-2.0, -0.1, 0.0]), 0.3) == 0.0)
    assert thm1_closed_form(2.0, 0.25) == pytest.approx(1.0)


def test_sample_F_families():
    g1 = make_grid(1)
    path = path_from_increments(g1, [-0.7])
    assert sample_F(counterexample(), 0.1, path) == 0.0
    paths = sample_path(g1, 1, RngStream(0), n=100_000)
    x = sample_F(deterministic_gaussian(), 0.3, paths)
    assert x.var() == pytest.approx(0.3, rel=0.02)
    with pytest.raises(ValueError):
        sample_F(counterexample(), 0.0, path)
    b = bounded_adapted(2.0, 2, 8)
    paths = sample_path(b.grid(), 2, RngStream(1), n=500)
    u = bounded_adapted_integrand(b.grid(), 2.0, 2)
    assert np.all(np.linalg.norm(u.values(paths), axis=-1) <= 2.0 + 1e-12)
    assert u.adapted
    with pytest.raises(ValueError):
        FamilySpec("nope")


def test_tail_mc_gaussian_and_trivial():
    fam = deterministic_gaussian()
    pt = tail_mc(fam, 0.25, 1.0, 200_000, RngStream(2))
    exact = 2 * stats.norm.sf(1.0 / 0.5)
    assert pt.ci_lo <= exact <= pt.ci_hi
    assert tail_mc(fam, 0.25, 0.0, 1000, RngStream(3)).p_est == 1.0
    with pytest.raises(ValueError):
        tail_mc(fam, 0.25, 1.0, 999, RngStream(3))


def test_tail_mc_thread_independent():
    fam = counterexample()
    a = tail_mc(fam, 0.01, 0.3, 300_000, RngStream(4), threads=1, chunk=10_000)
    b = tail_mc(fam, 0.01, 0.3, 300_000, RngStream(4), threads=8, chunk=10_000)
    assert a == b


def test_clopper_pearson():
    lo, hi = clopper_pearson(0, 10**6)
    assert lo == 0.0 and hi == pytest.approx(1 - 0.05 ** 1e-6)
    ci = stats.binomtest(7, 1000).proportion_ci(0.95, method="exact")
    assert clopper_pearson(7, 1000) == pytest.approx((ci.low, ci.high), rel=1e-10)
    assert clopper_pearson(1000, 1000)[1] == 1.0


@pytest.mark.parametrize("eps,L", [(1e-2, 2.0), (1e-2, 0.01), (1e-4, 5.0), (0.5, 0.1), (1e-6, 10.0)])
def test_thm1_tail_against_bisection(eps, L):
    p, logp = thm1_tail(eps, L)
    assert p == pytest.approx(_thm1_tail_oracle(eps, L), rel=1e-9)
    assert logp == pytest.approx(math.log(p))


def test_thm1_tail_example_and_asymptotics():
    p, _ = thm1_tail(1e-2, 2.0)
    assert p == pytest.approx(7.9e-7, rel=0.02)
    asym = stats.norm.pdf(0) * (3 / 8) ** 4 * 1e-4
    assert p == pytest.approx(asym, rel=0.01)


def test_thm1_tail_monte_carlo_agreement():
    fam = counterexample()
    for eps, L in [(0.01, 0.3), (0.04, 0.5)]:
        pt = tail_mc(fam, eps, L, 1_000_000, RngStream(5))
        q = tail_quadrature(fam, eps, L).p_est
        assert pt.ci_lo <= q <= pt.ci_hi


def test_gaussian_tail_closed_form():
    h = 0.5 * indicator(make_grid(2))
    fam = deterministic_gaussian(h)
    for eps, L in [(0.1, 0.3), (1e-3, 0.05), (0.5, 2.0)]:
        exact = 2 * stats.norm.sf(L / (math.sqrt(eps) * 0.5))
        assert tail_quadrature(fam, eps, L).p_est == pytest.approx(exact, abs=1e-10, rel=1e-12)
    p, logp = gaussian_tail(1e-4, 2.0)
    assert logp == pytest.approx(math.log(2) + stats.norm.logsf(200.0), rel=1e-12)
    with pytest.raises(ValueError):
        tail_quadrature(bounded_adapted(), 0.1, 1.0)


def test_counterexample_log_slope():
    scan = speed_scan(counterexample(), 0.5, 5.0, np.logspace(-2, -6, 9))
    assert scan.trend["log_p_slope"] == pytest.approx(2.0, abs=0.1)
    assert abs(scan.values[-1]) < abs(scan.values[0]) / 5


def test_speed_scan_properties():
    eps = np.logspace(-1, -4, 7)
    fam = deterministic_gaussian()
    scans = {a: speed_scan(fam, a, 1.5, eps) for a in (0.25, 0.5, 1.0, 2.0)}
    for a, b in [(0.25, 0.5), (0.5, 1.0), (1.0, 2.0)]:
        assert np.all(np.abs(scans[b].values) <= np.abs(scans[a].values))
    assert all(v <= 0 for v in scans[1.0].values)
    assert scans[1.0].values[-1] == pytest.approx(-1.5**2 / 2, rel=0.05)
    assert scans[1.0].eps_grid == sorted(eps, reverse=True)
    rows = scans[1.0].rows()
    assert list(rows[0]) == ["family", "method", "alpha", "L", "eps", "p_est", "ci_lo", "ci_hi", "value"]
    with pytest.raises(ValueError):
        speed_scan(fam, 1.0, 1.0, [0.1, 0.05, 0.02, 0.01])
    with pytest.raises(ValueError):
        speed_scan(fam, 1.0, 1.0, np.logspace(-1, -2, 6))


def test_speed_scan_mc_flags_zero_hits():
    scan = speed_scan(deterministic_gaussian(), 1.0, 3.0, np.logspace(-1, -3, 5), method="mc",
                      N=2000, rng=RngStream(6))
    assert scan.flagged
    zero = [pt for pt in scan.points if pt.hits == 0]
    assert zero and all(pt.log_value == pytest.approx(math.log(1 - 0.05 ** (1 / 2000))) for pt in zero)
    with pytest.raises(ValueError):
        tail_curve(deterministic_gaussian(), 1.0, [0.1], method="mc")


def test_schilder_bound_examples():
    b, logb = schilder_bound(1.0, 1, 0.01, 1.0)
    assert b == pytest.approx(4 * math.exp(-50)) and b == pytest.approx(7.7e-22, rel=0.01)
    rep = schilder_bound_check(1.0, 1, 0.01, 1.0, 10**5, RngStream(7))
    assert rep.passed and rep.point.hits == 0 and not rep.certified
    rep0 = schilder_bound_check(1.0, 1, 0.1, 0.0, 1000, RngStream(7))
    assert rep0.passed and rep0.reason == "vacuous bound"
    # deterministic u ≡ K: exact tail 2Φ̄(L/(√ε K)) stays below the bound
    for K in (0.5, 1.0, 2.0):
        for eps in (0.5, 0.1, 0.01):
            for L in (0.1, 1.0, 3.0):
                tail = 2 * stats.norm.sf(L / (math.sqrt(eps) * K))
                assert tail <= schilder_bound(K, 1, eps, L)[0]


def test_schilder_bound_with_hits():
    rep = schilder_bound_check(1.0, 1, 0.2, 1.0, 100_000, RngStream(8))
    assert rep.point.hits > 0 and rep.passed and rep.certified


def test_langevin_hand_derivative_matches_expression_tree():
    g = make_grid(6)
    prm = {"kappa0": 0.7, "a": 0.9, "sigma": 1.3, "x0": 0.4}
    hand = LangevinIntegrand(g, 0.5, **prm)
    tree = langevin_cylindrical(g, 0.5, **prm)
    paths = sample_path(g, 1, RngStream(9), n=20)
    assert np.allclose(hand.values(paths), tree.values(paths), rtol=1e-13, atol=1e-16)
    assert np.allclose(hand.derivative(paths), tree.derivative(paths), rtol=1e-12, atol=1e-15)
    assert np.allclose(hand.trace(paths), tree.trace(paths), rtol=1e-12, atol=1e-15)
    assert np.allclose(skorohod_integral(hand, paths).value, skorohod_integral(tree, paths).value,
                       rtol=1e-12, atol=1e-15)


def test_app_decomposition():
    g = make_grid(256)
    paths = sample_path(g, 1, RngStream(10), n=200)
    eps = 0.3
    d = app_decompose(eps, paths, PARAMS)
    assert np.allclose(d.total, d.direct, rtol=0, atol=1e-12)
    u = LangevinIntegrand(g, eps, **PARAMS)
    assert np.allclose(d.f2, math.sqrt(eps) * u.trace(paths), rtol=1e-12, atol=1e-15)
    assert d.apriori_ok
    assert sample_F(langevin_app(), eps, paths).shape == (200,)
    for over in ({"sigma": 0.0}, {"a": 0.0}):
        dd = app_decompose(eps, paths, {**PARAMS, **over})
        assert np.all(dd.f2 == 0.0)
    with pytest.raises(ValueError):
        app_decompose(eps, sample_path(make_grid(128), 1, RngStream(0)), PARAMS)
    with pytest.raises(ValueError):
        app_decompose(eps, paths, {**PARAMS, "kappa0": 0.0})
    with pytest.raises(ValueError):
        langevin_app(kappa0=-1.0)


@pytest.mark.parametrize("over", [{"sigma": 0.0}, {"a": 0.0}])
def test_langevin_closed_form_variance(over):
    g = make_grid(256)
    prm = {**PARAMS, **over}
    eps = 0.25
    x = app_decompose(eps, sample_path(g, 1, RngStream(11), n=20_000), prm).total
    var = x.var(ddof=1)
    se = math.sqrt((np.mean((x - x.mean()) ** 4) - var**2) / x.size)
    exact = langevin_variance_closed_form(g, eps, **prm)
    assert abs(var - exact) < 3 * se
    if over == {"sigma": 0.0}:
        # independent: deterministic weights, Var = ε Σ Δt X_i²
        S = np.cumsum((prm["kappa0"] + prm["a"] * (1 + math.cos(prm["x0"]))) * g.dt[::-1])[::-1]
        X = np.exp(-S / eps**2) * math.cos(prm["x0"])
        assert exact == pytest.approx(eps * np.sum(g.dt * X**2), rel=1e-12)
    with pytest.raises(ValueError):
        langevin_variance_closed_form(g, eps, **PARAMS)


@pytest.mark.parametrize("eps", [1e-1, 1e-2, 1e-3])
def test_weight_bound(eps):
    val, bound, ok = weight_bound_check(eps)
    assert ok
    ref, _ = integrate.quad(lambda r: math.exp(-r) * r, 0, 1 / eps**2, points=[1, 10, 50], limit=200)
    assert val == pytest.approx(eps**2 * ref, rel=1e-9)
    assert weight_bound_exact(eps) == pytest.approx(val, rel=1e-9)
    assert weight_bound_check(eps, kappa0=2.0)[2]

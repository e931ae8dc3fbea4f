"""Families ``F_ε = √ε δ(u_ε)``, their tail probabilities and speed scans.

Four families are provided:

``counterexample_thm1``
    ``u = f(W(1)) 1_[0,1]`` with ``f = cp_{3/4}``; integration by parts gives
    ``F_ε = √ε (f(z) z - f'(z))`` with ``z = W(1)``, so tails reduce to a
    one-dimensional Gaussian integral.
``bounded_adapted``
    ``u^k(t) = (K/√d) tanh(W^k(t_i))`` on cell ``i``: adapted, ``|u| ≤ K``, and
    with an unbounded integral (``log cosh W(1)`` up to a bounded drift).
``deterministic_gaussian``
    ``F_ε = √ε W(h)``.
``langevin_app``
    the damped-Langevin diffusion term with environment ``ξ(t) = x0 + σ W(t)``,
    split into a Skorohod part and a trace part.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate, optimize, stats
from scipy.special import erf, log_ndtr, ndtr

from .grid import BrownianPath, Kernel, TimeGrid, indicator, kernel_norm, make_grid, sample_path, wiener_integral
from .malliavin import CylindricalFunctional, apply, wiener
from .moments import NumericalFailure
from .rng import RngStream, map_chunks
from .skorohod import StepIntegrand, skorohod_integral
from .smooth import SmoothMap, Var, cos, tanh
from .smooth import exp as sexp

FAMILY_IDS = ("counterexample_thm1", "bounded_adapted", "deterministic_gaussian", "langevin_app")
LANGEVIN_MIN_CELLS = 2**8
_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class FamilySpec:
    family_id: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family_id not in FAMILY_IDS:
            raise ValueError(f"unknown family {self.family_id!r}; valid: {', '.join(FAMILY_IDS)}")

    @property
    def dim(self) -> int:
        return int(self.params.get("dim", 1))

    def grid(self) -> TimeGrid:
        if self.family_id == "counterexample_thm1":
            return make_grid(self.params.get("n_cells", 1))
        if self.family_id == "deterministic_gaussian":
            return self.params["h"].grid
        default = LANGEVIN_MIN_CELLS if self.family_id == "langevin_app" else 16
        return make_grid(self.params.get("n_cells", default))


def counterexample() -> FamilySpec:
    return FamilySpec("counterexample_thm1")


def bounded_adapted(K: float = 1.0, dim: int = 1, n_cells: int = 16) -> FamilySpec:
    return FamilySpec("bounded_adapted", {"K": float(K), "dim": dim, "n_cells": n_cells})


def deterministic_gaussian(h: Kernel | None = None) -> FamilySpec:
    """``√ε W(h)``; the default ``h = 1_[0,1]`` has unit norm."""
    if h is None:
        h = indicator(make_grid(1))
    return FamilySpec("deterministic_gaussian", {"h": h, "dim": h.dim})


def langevin_app(kappa0: float = 1.0, a: float = 0.5, sigma: float = 1.0, x0: float = 0.0,
                 n_cells: int = LANGEVIN_MIN_CELLS) -> FamilySpec:
    if kappa0 <= 0:
        raise ValueError("kappa0 must be > 0 (λ positivity)")
    return FamilySpec("langevin_app", {"kappa0": float(kappa0), "a": float(a),
                                       "sigma": float(sigma), "x0": float(x0),
                                       "n_cells": int(n_cells)})


# -- integrands --------------------------------------------------------------

def thm1_integrand(grid: TimeGrid | None = None) -> StepIntegrand:
    """``cp_{3/4}(W(1)) 1_[0,1]`` as a generic step integrand."""
    grid = grid or make_grid(1)
    one = indicator(grid)
    return StepIntegrand.product(apply("thm1_f", one), one)


def bounded_adapted_integrand(grid: TimeGrid, K: float = 1.0, dim: int = 1) -> StepIntegrand:
    coef = []
    for i in range(grid.n_cells):
        row = []
        for k in range(dim):
            w = wiener(indicator(grid, 0.0, grid.knots[i], dim, k))
            row.append(CylindricalFunctional(SmoothMap((K / math.sqrt(dim)) * tanh(Var(0)), 1),
                                             w.kernels))
        coef.append(row)
    return StepIntegrand.from_cells(coef)


class LangevinIntegrand:
    """``X_i = exp(-ε^-2 Σ_{j≥i} λ(ξ_j) Δt) g(ξ_i)`` on cell ``i``.

    ``ξ_j = x0 + σ W(t_j)`` at the left knots, ``λ(x) = κ0 + a(1 + cos x)`` and
    ``g = cos``. ``X_i`` is a smooth function of the increments; its
    derivative with respect to ``ΔW_m`` is

        m < i:  σ E_i (g'(ξ_i) - g(ξ_i) R_i / ε²)
        m ≥ i:  -σ E_i g(ξ_i) R_{m+1} / ε²

    with ``E_i`` the exponential factor and ``R_i = Σ_{j≥i} λ'(ξ_j) Δt``.
    """

    def __init__(self, grid: TimeGrid, eps: float, kappa0: float = 1.0, a: float = 0.5,
                 sigma: float = 1.0, x0: float = 0.0):
        if kappa0 <= 0:
            raise ValueError("kappa0 must be > 0 (λ positivity)")
        if eps <= 0:
            raise ValueError("eps must be > 0")
        self.grid = grid
        self.dim = 1
        self.eps = float(eps)
        self.kappa0, self.a, self.sigma, self.x0 = float(kappa0), float(a), float(sigma), float(x0)

    @property
    def adapted(self) -> bool:
        return self.sigma == 0.0

    def singular(self, order: int = 0) -> bool:
        return False

    def lam(self, x):
        return self.kappa0 + self.a * (1.0 + np.cos(x))

    def dlam(self, x):
        return -self.a * np.sin(x)

    def _parts(self, path: BrownianPath):
        dt = self.grid.dt
        xi = self.x0 + self.sigma * path.left_values()[..., 0]
        lam_dt = self.lam(xi) * dt
        S = np.flip(np.cumsum(np.flip(lam_dt, -1), -1), -1)
        E = np.exp(-S / self.eps**2)
        dl_dt = self.dlam(xi) * dt
        R = np.flip(np.cumsum(np.flip(dl_dt, -1), -1), -1)
        R_next = np.concatenate([R[..., 1:], np.zeros(R.shape[:-1] + (1,))], -1)
        return xi, E, R, R_next

    def values(self, path: BrownianPath) -> np.ndarray:
        xi, E, _, _ = self._parts(path)
        return (E * np.cos(xi))[..., None]

    def trace(self, path: BrownianPath) -> np.ndarray:
        xi, E, _, R_next = self._parts(path)
        dt = self.grid.dt
        return -self.sigma / self.eps**2 * np.sum(dt * E * np.cos(xi) * R_next, axis=-1)

    def derivative(self, path: BrownianPath) -> np.ndarray:
        """``D_s u(r)``, shape ``batch + (n, 1, n, 1)`` (row = r cell, col = s cell)."""
        xi, E, R, R_next = self._parts(path)
        n = self.grid.n_cells
        g, dg = np.cos(xi), -np.sin(xi)
        before = self.sigma * E * (dg - g * R / self.eps**2)
        after = -self.sigma * E * g / self.eps**2
        i = np.arange(n)[:, None]
        m = np.arange(n)[None, :]
        D = np.where(m < i, before[..., :, None], after[..., :, None] * R_next[..., None, :])
        return D[..., :, None, :, None]


def langevin_cylindrical(grid: TimeGrid, eps: float, kappa0: float = 1.0, a: float = 0.5,
                         sigma: float = 1.0, x0: float = 0.0) -> StepIntegrand:
    """The same integrand assembled from expression trees (slow; small grids)."""
    n = grid.n_cells
    cells = [indicator(grid, grid.knots[m], grid.knots[m + 1]) for m in range(n)]
    y = [Var(m) for m in range(n)]
    xi = []
    acc = None
    for j in range(n):
        xi.append(x0 + sigma * acc if acc is not None else x0 + 0.0 * y[0])
        acc = y[j] if acc is None else acc + y[j]
    coef = []
    for i in range(n):
        s = None
        for j in range(i, n):
            term = (kappa0 + a * (1.0 + cos(xi[j]))) * float(grid.dt[j])
            s = term if s is None else s + term
        expr = sexp((-1.0 / eps**2) * s) * cos(xi[i])
        coef.append([CylindricalFunctional(SmoothMap(expr, n), cells)])
    return StepIntegrand.from_cells(coef)


# -- sampling F_ε ------------------------------------------------------------

def _check_eps(eps):
    if not eps > 0:
        raise ValueError("eps must be > 0")


def thm1_closed_form(z, eps: float):
    """``√ε (f(z) z - f'(z))`` with ``f = cp_{3/4}`` and ``f' = 0`` off (0, 1)."""
    z = np.asarray(z, dtype=float)
    f = np.clip(z, 0.0, 1.0) ** 0.75
    inside = (z > 0.0) & (z < 1.0)
    fp = np.zeros_like(z)
    fp[inside] = 0.75 * z[inside] ** -0.25
    return math.sqrt(eps) * (f * z - fp)


@dataclass(frozen=True)
class AppDecomposition:
    f1: np.ndarray
    f2: np.ndarray
    total: np.ndarray
    direct: np.ndarray
    apriori_lhs: np.ndarray
    apriori_bound: float

    @property
    def apriori_ok(self) -> bool:
        return bool(np.all(self.apriori_lhs <= self.apriori_bound))


def _langevin_params(params: dict) -> dict:
    return {k: params[k] for k in ("kappa0", "a", "sigma", "x0") if k in params}


def app_decompose(eps: float, path: BrownianPath, params: dict | None = None,
                  min_cells: int = LANGEVIN_MIN_CELLS) -> AppDecomposition:
    """Skorohod part, trace part and direct value of the Langevin family."""
    _check_eps(eps)
    params = dict(params or {})
    kp = {"kappa0": 1.0, "a": 0.5, "sigma": 1.0, "x0": 0.0, **_langevin_params(params)}
    if kp["kappa0"] <= 0:
        raise ValueError("kappa0 must be > 0 (λ positivity)")
    grid = path.grid
    if grid.n_cells < min_cells:
        raise ValueError(f"langevin_app needs at least {min_cells} cells")
    u = LangevinIntegrand(grid, eps, **kp)
    f1 = math.sqrt(eps) * np.asarray(skorohod_integral(u, path).value)

    # trace part: -ε^{-3/2} Σ_i Δt E_i g(ξ_i) ∫ λ'(ξ(r)) D_s ξ(r) dr, s ∈ cell_i,
    # with D_s ξ(r) = σ for s-cell strictly before the r-cell
    dt = grid.dt
    xi, E, _, _ = u._parts(path)
    dl = u.dlam(xi) * dt
    inner = kp["sigma"] * (np.sum(dl, axis=-1, keepdims=True) - np.cumsum(dl, axis=-1))
    f2 = -eps**-1.5 * np.sum(dt * E * np.cos(xi) * inner, axis=-1)

    # direct: √ε e^{-A} Σ e^{B_i} g(ξ_i) ΔW_i, exponents combined before exp
    lam_dt = u.lam(xi) * dt
    B = np.cumsum(lam_dt, axis=-1) - lam_dt
    A = np.sum(lam_dt, axis=-1, keepdims=True)
    direct = math.sqrt(eps) * np.sum(np.exp((B - A) / eps**2) * np.cos(xi)
                                     * path.increments[..., 0], axis=-1)
    lhs = np.abs(np.sum(dt * E * np.cos(xi), axis=-1))
    bound = eps**2 / kp["kappa0"]
    return AppDecomposition(f1, f2, f1 + f2, direct, lhs, bound)


def sample_F(family: FamilySpec, eps: float, path: BrownianPath):
    """One draw (or a batch of draws) of ``F_ε`` on ``path``."""
    _check_eps(eps)
    fid, prm = family.family_id, family.params
    if fid == "counterexample_thm1":
        out = thm1_closed_form(path.terminal()[..., 0], eps)
    elif fid == "deterministic_gaussian":
        out = math.sqrt(eps) * np.asarray(wiener_integral(path, prm["h"]))
    elif fid == "bounded_adapted":
        u = bounded_adapted_integrand(path.grid, prm.get("K", 1.0), path.dim)
        out = math.sqrt(eps) * np.asarray(skorohod_integral(u, path).value)
    else:
        out = app_decompose(eps, path, prm).total
    return float(out) if np.ndim(out) == 0 else out


# -- tail probabilities ------------------------------------------------------

@dataclass(frozen=True)
class TailPoint:
    eps: float
    L: float
    p_est: float
    ci_lo: float
    ci_hi: float
    method: str
    hits: int = 0
    n: int = 0
    flagged: bool = False
    log_p: float | None = None

    @property
    def log_value(self) -> float:
        """``log P``, or ``log`` of the upper bound for a zero-hit cell."""
        if self.log_p is not None:
            return self.log_p
        if self.flagged:
            return math.log(self.ci_hi)
        return math.log(self.p_est) if self.p_est > 0 else -math.inf


@dataclass
class TailCurve:
    family: str
    L: float
    points: list

    @property
    def eps_grid(self) -> list:
        return [pt.eps for pt in self.points]


def clopper_pearson(hits: int, n: int, level: float = 0.95) -> tuple[float, float]:
    """Exact binomial interval; zero hits give the one-sided upper bound."""
    a = 1.0 - level
    if hits == 0:
        return 0.0, 1.0 - a ** (1.0 / n)
    lo = float(stats.beta.ppf(a / 2, hits, n - hits + 1))
    hi = 1.0 if hits == n else float(stats.beta.ppf(1 - a / 2, hits + 1, n - hits))
    return lo, hi


def tail_mc(family: FamilySpec, eps: float, L: float, N: int, rng: RngStream,
            threads: int | None = None, chunk: int = 1 << 16) -> TailPoint:
    """Hit-count estimate of ``P(|F_ε| > L)`` with a Clopper–Pearson interval."""
    if N < 1000:
        raise ValueError("tail_mc needs N >= 1000")
    grid, dim = family.grid(), family.dim

    def count(a, b):
        path = sample_path(grid, dim, rng, n=b - a, start=a)
        return int(np.count_nonzero(np.abs(sample_F(family, eps, path)) > L))

    hits = sum(map_chunks(count, N, threads, chunk=chunk))
    lo, hi = clopper_pearson(hits, N)
    return TailPoint(float(eps), float(L), hits / N, lo, hi, "mc", hits, N, hits == 0)


def _thm1_root(c: float, sign: int) -> tuple[float, list]:
    """Solve ``sign·(0.75 z^{-1/4} - z^{7/4}) = c`` for z in (0, 1) in log z."""

    def h(t):
        return sign * (0.75 * math.exp(-t / 4.0) - math.exp(1.75 * t)) - c

    if sign > 0:
        lo, hi = 4.0 * math.log(0.75 / (c + 1.0)), 0.0
    else:
        lo, hi = 4.0 * math.log(0.75 / 1.0) - 1.0, 0.0
        while h(lo) > 0 and lo > -200:
            lo -= 5.0
    trace = [(lo, h(lo)), (hi, h(hi))]
    if not (np.sign(trace[0][1]) != np.sign(trace[1][1])):
        raise NumericalFailure("root bracketing failed", {"c": c, "sign": sign, "trace": trace})
    t = optimize.brentq(h, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return math.exp(t), trace


def thm1_tail(eps: float, L: float) -> tuple[float, float]:
    """``P(|√ε (f(Z)Z - f'(Z))| > L)`` and its log, by root bracketing."""
    _check_eps(eps)
    if L < 0:
        raise ValueError("L must be >= 0")
    if L == 0:
        return 0.5, math.log(0.5)
    c = L / math.sqrt(eps)
    z1, _ = _thm1_root(c, +1)
    mass = 0.5 * float(erf(z1 / _SQRT2))
    if 0.25 > c:
        z2, _ = _thm1_root(c, -1)
        mass += float(ndtr(1.0) - ndtr(z2))
    upper = max(1.0, c)
    mass += float(ndtr(-upper))
    return mass, math.log(mass)


def gaussian_tail(eps: float, L: float, norm: float = 1.0) -> tuple[float, float]:
    """``P(|√ε ‖h‖ Z| > L) = 2Φ̄(L/(√ε‖h‖))`` and its log."""
    x = L / (math.sqrt(eps) * norm)
    logp = math.log(2.0) + float(log_ndtr(-x))
    return 2.0 * float(ndtr(-x)), logp


def tail_quadrature(family: FamilySpec, eps: float, L: float) -> TailPoint:
    _check_eps(eps)
    if family.family_id == "counterexample_thm1":
        p, logp = thm1_tail(eps, L)
    elif family.family_id == "deterministic_gaussian":
        p, logp = gaussian_tail(eps, L, float(kernel_norm(family.params["h"])))
    else:
        raise ValueError(f"{family.family_id} has no scalar Gaussian representation")
    return TailPoint(float(eps), float(L), p, p, p, "quadrature", log_p=logp)


def tail_curve(family: FamilySpec, L: float, eps_grid: Sequence[float], method: str = "quadrature",
               N: int | None = None, rng: RngStream | None = None,
               threads: int | None = None) -> TailCurve:
    points = []
    for j, eps in enumerate(eps_grid):
        if method == "quadrature":
            points.append(tail_quadrature(family, eps, L))
        elif method == "mc":
            if N is None or rng is None:
                raise ValueError("method 'mc' needs N and rng")
            points.append(tail_mc(family, eps, L, N, rng.child(j), threads))
        else:
            raise ValueError(f"unknown method {method!r}")
    return TailCurve(family.family_id, float(L), points)


# -- speed scans -------------------------------------------------------------

@dataclass
class SpeedScan:
    family: str
    method: str
    alpha: float
    L: float
    eps_grid: list
    values: list
    points: list
    flagged: bool
    trend: dict

    def rows(self) -> list[dict]:
        return [{"family": self.family, "method": self.method, "alpha": self.alpha,
                 "L": self.L, "eps": pt.eps, "p_est": pt.p_est, "ci_lo": pt.ci_lo,
                 "ci_hi": pt.ci_hi, "value": v}
                for pt, v in zip(self.points, self.values)]


def speed_scan(family: FamilySpec, alpha: float, L: float, eps_grid: Sequence[float],
               method: str = "quadrature", N: int | None = None, rng: RngStream | None = None,
               threads: int | None = None) -> SpeedScan:
    """``ε^α log P(|F_ε| > L)`` over ``eps_grid``, ordered from largest ε down.

    ``trend`` records the first and last values, the number of steps where
    ``|value|`` grows while ε shrinks, the least-squares slope of ``log P``
    against ``log ε`` and that of ``log(-log P)`` against ``log(1/ε)``.
    """
    eps_sorted = sorted((float(e) for e in eps_grid), reverse=True)
    if len(eps_sorted) < 5 or eps_sorted[0] / eps_sorted[-1] < 100.0 * (1 - 1e-12):
        raise ValueError("eps_grid needs >= 5 points spanning >= 2 decades")
    curve = tail_curve(family, L, eps_sorted, method, N, rng, threads)
    logs = np.array([pt.log_value for pt in curve.points])
    eps_arr = np.array(eps_sorted)
    values = list(eps_arr**alpha * logs)
    mags = np.abs(values)
    flagged = any(pt.flagged for pt in curve.points)
    finite = np.isfinite(logs)
    trend = {
        "first": values[0],
        "last": values[-1],
        "monotonicity_violations": int(np.count_nonzero(np.diff(mags) > 0)),
        "log_p_slope": float(np.polyfit(np.log(eps_arr[finite]), logs[finite], 1)[0])
        if finite.sum() >= 2 else math.nan,
    }
    neg = finite & (logs < 0)
    trend["speed_slope"] = (float(np.polyfit(np.log(1 / eps_arr[neg]), np.log(-logs[neg]), 1)[0])
                            if neg.sum() >= 2 else math.nan)
    return SpeedScan(family.family_id, method, float(alpha), float(L), eps_sorted, values,
                     curve.points, flagged, trend)


# -- Schilder-type bound -----------------------------------------------------

@dataclass(frozen=True)
class SchilderReport:
    K: float
    d: int
    eps: float
    L: float
    bound: float
    log_bound: float
    point: TailPoint
    passed: bool
    certified: bool
    reason: str


def schilder_bound(K: float, d: int, eps: float, L: float) -> tuple[float, float]:
    log_b = math.log(4 * d) - L**2 / (2 * d * eps * K**2)
    return math.exp(log_b), log_b


def schilder_bound_check(K: float, d: int, eps: float, L: float, N: int, rng: RngStream,
                         n_cells: int = 16, threads: int | None = None) -> SchilderReport:
    """Compare ``P(|F_ε| > L)`` for the bounded adapted family with ``4d exp(-L²/(2dεK²))``.

    Passes when the bound is vacuous, when the Clopper–Pearson upper limit is
    below the bound, or when no hits were seen (the sample cannot refute a
    bound smaller than its resolution; ``certified`` is then False).
    """
    bound, log_b = schilder_bound(K, d, eps, L)
    point = tail_mc(bounded_adapted(K, d, n_cells), eps, L, N, rng, threads)
    certified = point.hits > 0 and point.ci_hi <= bound
    if bound >= 1.0:
        passed, reason = True, "vacuous bound"
    elif point.hits == 0:
        passed, reason = True, "zero hits (rare-event flag); log-bound below resolution" \
            if log_b < math.log(point.ci_hi) else "zero hits; upper CI within bound"
        certified = point.ci_hi <= bound
    else:
        passed, reason = certified, "upper CI <= bound" if certified else "upper CI exceeds bound"
    return SchilderReport(K, d, eps, L, bound, log_b, point, passed, certified, reason)


# -- analytic checks for the application -------------------------------------

def weight_bound_check(eps: float, kappa0: float = 1.0) -> tuple[float, float, bool]:
    """Quadrature of ``∫_0^1 e^{-κ0 s/ε²} s/ε² ds`` against ``ε²/κ0²``.

    For small ε the integral equals the bound to machine precision, so the
    comparison allows the quadrature's own error estimate (at least a few ulp).
    """
    scale = eps**2 / kappa0
    pts = [scale * m for m in (1.0, 5.0, 20.0, 60.0) if scale * m < 1.0]
    val, err = integrate.quad(lambda s: math.exp(-kappa0 * s / eps**2) * s / eps**2, 0.0, 1.0,
                              points=pts or None, limit=500, epsabs=1e-300, epsrel=1e-12)
    bound = eps**2 / kappa0**2
    slack = max(err, 8 * np.finfo(float).eps * abs(val))
    return val, bound, val - slack <= bound


def weight_bound_exact(eps: float, kappa0: float = 1.0) -> float:
    x = kappa0 / eps**2
    return eps**2 / kappa0**2 * (1.0 - math.exp(-x) * (1.0 + x))


def langevin_variance_closed_form(grid: TimeGrid, eps: float, kappa0: float = 1.0,
                                  a: float = 0.5, sigma: float = 1.0, x0: float = 0.0) -> float:
    """``Var F_ε`` on the grid when ``a = 0`` or ``σ = 0`` (left-point rule).

    With ``a = 0`` the weights are deterministic and
    ``E g²(ξ(t)) = (1 + cos(2x0) e^{-2σ²t}) / 2``; with ``σ = 0`` the whole
    integrand is deterministic.
    """
    if a != 0.0 and sigma != 0.0:
        raise ValueError("closed form only for a = 0 or sigma = 0")
    t, dt = grid.left, grid.dt
    lam = kappa0 + a * (1.0 + math.cos(x0)) if sigma == 0.0 else kappa0
    S = np.flip(np.cumsum(np.flip(np.full_like(t, lam) * dt)))
    w = np.exp(-2.0 * S / eps**2)
    g2 = 0.5 * (1.0 + math.cos(2 * x0) * np.exp(-2 * sigma**2 * t))
    return float(eps * np.sum(dt * w * g2))

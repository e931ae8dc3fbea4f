"""Moment norms of integrands, growth-exponent fits, a Gaussian moment
quadrature with cutoff sweeps, Meyer-type ratios and speed-exponent bounds.

Monte Carlo norms are smooth functions of sample means, so their standard
errors come from the delta method: each sample's influence on the estimate is
``∇g(m) · (Y_n - m)`` and the standard error is the standard deviation of the
influences over ``√N``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import integrate

from .grid import sample_path
from .rng import RngStream, concat, map_chunks
from .skorohod import skorohod_integral
from .smooth import SmoothMap, from_name

NORM_IDS = ("Lp_Omega_H", "Lp_Omega_HxH", "Lp_OmegaxH2", "Lp_OmegaxH3", "Lp_Omega_semiH")
_PHI0 = 1.0 / math.sqrt(2.0 * math.pi)


class NumericalFailure(RuntimeError):
    """A computation produced non-finite values or failed to bracket a root."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class NormEstimate:
    norm_id: str
    p: float
    eps: float
    value: float
    stderr: float
    method: str = "mc"
    divergent: bool = False
    n_samples: int = 0

    def to_row(self) -> dict:
        return {"norm_id": self.norm_id, "p": self.p, "eps": self.eps,
                "value": self.value, "stderr": self.stderr, "method": self.method}


# -- per-sample statistics ---------------------------------------------------

def _abs_p(x: np.ndarray, p: float, axis) -> np.ndarray:
    """``|x|^p`` with |.| the Euclidean norm over ``axis``."""
    return np.sum(x * x, axis=axis) ** (p / 2.0)


def _norm_samples(u, path, norm_id: str, p: float) -> np.ndarray:
    """Per-path statistic whose mean(s) determine the norm."""
    dt = u.grid.dt
    if norm_id == "Lp_Omega_H":
        vals = u.values(path)
        return np.einsum("...ik,i->...", vals * vals, dt) ** (p / 2.0)
    if norm_id == "Lp_Omega_semiH":
        return _abs_p(u.values(path), p, axis=-1)
    if norm_id in ("Lp_Omega_HxH", "Lp_OmegaxH2"):
        D = u.derivative(path)
        w = np.einsum("i,j->ij", dt, dt)
        if norm_id == "Lp_Omega_HxH":
            return np.einsum("...ikjl,ij->...", D * D, w) ** (p / 2.0)
        return np.einsum("...ij,ij->...", _abs_p(D, p, axis=(-3, -1)), w)
    if norm_id == "Lp_OmegaxH3":
        D2 = u.second_derivative(path)
        w = np.einsum("i,j,m->ijm", dt, dt, dt)
        return np.einsum("...ijm,ijm->...", _abs_p(D2, p, axis=(-5, -3, -1)), w)
    raise ValueError(f"unknown norm_id {norm_id!r}; valid: {', '.join(NORM_IDS)}")


def _delta_se(Y: np.ndarray, grad: np.ndarray) -> float:
    """Standard error of ``g(mean(Y))`` given ``∇g`` at the mean."""
    Y = Y.reshape(Y.shape[0], -1)
    if Y.shape[0] < 2 or np.all(np.ptp(Y, axis=0) == 0):
        return 0.0
    influence = (Y - Y.mean(axis=0)) @ grad.reshape(-1)
    return float(np.std(influence, ddof=1) / math.sqrt(Y.shape[0]))


def _norm_from_samples(Y: np.ndarray, norm_id: str, p: float, dt: np.ndarray):
    m = Y.mean(axis=0)
    if norm_id == "Lp_Omega_semiH":
        inner = np.where(m > 0, m, 0.0) ** (2.0 / p)
        value = math.sqrt(float(np.dot(dt, inner)))
        with np.errstate(divide="ignore", invalid="ignore"):
            grad = np.where(m > 0, dt * (2.0 / p) * m ** (2.0 / p - 1.0), 0.0)
        grad = grad / (2.0 * value) if value > 0 else grad * 0.0
        return value, _delta_se(Y, grad)
    m = float(m)
    value = m ** (1.0 / p)
    grad = np.array([(1.0 / p) * m ** (1.0 / p - 1.0)]) if m > 0 else np.zeros(1)
    return value, _delta_se(Y, grad)


def tail_index(Y: np.ndarray, k: int | None = None) -> tuple[float, float]:
    """Hill estimate of ``β`` in ``P(Y > y) ~ y^-β`` from the top ``k`` samples.

    Returns ``(β̂, se)`` with ``se = β̂/√k``; ``(inf, 0)`` when there is no tail.
    """
    Y = np.sort(np.asarray(Y, dtype=float).reshape(-1))
    pos = Y[Y > 0]
    if k is None:
        k = max(10, int(math.sqrt(pos.size)))
    if pos.size <= k or pos[-k - 1] <= 0:
        return math.inf, 0.0
    logs = np.log(pos[-k:] / pos[-k - 1])
    mean = float(np.mean(logs))
    if mean <= 0:
        return math.inf, 0.0
    beta = 1.0 / mean
    return beta, beta / math.sqrt(k)


def truncation_sweep(Y: np.ndarray, min_tail: int = 10) -> dict:
    """Divergence diagnostic for the mean of non-negative samples ``Y``.

    Records the truncated means ``E[min(Y, T)]`` over decades of ``T`` (up to
    where ``min_tail`` samples still exceed ``T``) and the Hill tail index.
    For an infinite mean the truncated means grow by a constant amount per
    decade and the tail index is at most 1; the mean is flagged divergent
    unless the tail index is more than two standard errors above 1. A sample
    cannot tell a divergent mean from one it does not resolve, so callers
    apply this only where divergence is structurally possible.
    """
    Y = np.asarray(Y, dtype=float).reshape(-1)
    pos = Y[Y > 0]
    report = {"levels": [], "truncated_means": [], "tail_index": math.inf,
              "tail_index_se": 0.0, "divergent": False}
    if pos.size < 4 * min_tail:
        return report
    levels = [float(np.median(pos))]
    while np.count_nonzero(Y > levels[-1] * 10.0) >= min_tail:
        levels.append(levels[-1] * 10.0)
    report["levels"] = levels
    report["truncated_means"] = [float(np.mean(np.minimum(Y, lv))) for lv in levels]
    beta, se = tail_index(Y)
    report["tail_index"], report["tail_index_se"] = beta, se
    report["divergent"] = bool(beta - 2.0 * se <= 1.0)
    return report


_NORM_ORDER = {"Lp_Omega_H": 0, "Lp_Omega_semiH": 0, "Lp_Omega_HxH": 1, "Lp_OmegaxH2": 1,
               "Lp_OmegaxH3": 2}


def _may_diverge(u, order: int) -> bool:
    """Only integrands with singular coefficient maps can have infinite moments."""
    check = getattr(u, "singular", None)
    return True if check is None else bool(check(order))


def estimate_norm(family: Callable[[float], object], eps: float, norm_id: str, p: float,
                  N: int, rng: RngStream, threads: int | None = None) -> NormEstimate:
    """Monte Carlo estimate of one of the integrand norms at ``eps``.

    ``family(eps)`` must return an integrand exposing ``values``,
    ``derivative`` and, for ``Lp_OmegaxH3``, ``second_derivative``.
    """
    if norm_id not in NORM_IDS:
        raise ValueError(f"unknown norm_id {norm_id!r}; valid: {', '.join(NORM_IDS)}")
    if p < 1:
        raise ValueError("p must be >= 1")
    if N < 100:
        raise ValueError("estimate_norm needs N >= 100")
    u = family(eps)

    def chunk(a, b):
        path = sample_path(u.grid, u.dim, rng, n=b - a, start=a)
        return _norm_samples(u, path, norm_id, p)

    Y = concat(map_chunks(chunk, N, threads))
    value, se = _norm_from_samples(Y, norm_id, p, u.grid.dt)
    divergent = False
    if _may_diverge(u, _NORM_ORDER[norm_id]):
        flat = Y.reshape(Y.shape[0], -1).sum(axis=1)
        divergent = truncation_sweep(flat)["divergent"]
    return NormEstimate(norm_id, float(p), float(eps), value, se, "mc", divergent, N)


# -- growth fits -------------------------------------------------------------

@dataclass(frozen=True)
class GrowthFit:
    kappa_eps: float
    kappa_p: float
    intercept: float
    r2: float
    eps_grid: tuple
    p_grid: tuple

    @property
    def constant(self) -> float:
        return math.exp(self.intercept)


def fit_growth(estimates: Iterable[NormEstimate]) -> GrowthFit:
    """Least-squares fit of ``log value ≈ log c + κ_ε log ε + κ_p log p``."""
    est = list(estimates)
    eps = np.array([e.eps for e in est], dtype=float)
    ps = np.array([e.p for e in est], dtype=float)
    vals = np.array([e.value for e in est], dtype=float)
    eps_grid, p_grid = tuple(sorted(set(eps))), tuple(sorted(set(ps)))
    if len(eps_grid) < 3 or len(p_grid) < 3:
        raise ValueError("fit_growth needs >= 3 distinct eps and >= 3 distinct p values")
    if not np.all(np.isfinite(vals)) or np.any(vals <= 0) or any(e.divergent for e in est):
        raise ValueError("fit_growth needs finite positive, non-divergent estimates")
    X = np.column_stack([np.ones_like(eps), np.log(eps), np.log(ps)])
    y = np.log(vals)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    r2 = 1.0 if ss_tot <= 1e-300 else max(0.0, 1.0 - ss_res / ss_tot)
    return GrowthFit(float(coef[1]), float(coef[2]), float(coef[0]), r2, eps_grid, p_grid)


# -- Gaussian moments by quadrature ------------------------------------------

DEFAULT_CUTOFFS = tuple(10.0 ** -k for k in range(3, 10))


@dataclass
class MomentTable:
    p_grid: tuple
    values: list
    divergent: list
    cutoffs: tuple
    sweeps: list = field(default_factory=list)
    slopes: list = field(default_factory=list)

    def value(self, p: float) -> float:
        return self.values[self.p_grid.index(p)]


def _gauss_pdf(x):
    return np.exp(-0.5 * x * x) * _PHI0


def _log_or_minf(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


def _integrate_piece(h, a: float, b: float, anchor: float | None) -> float:
    """``∫_a^b h``; pieces touching ``anchor`` use log-distance coordinates."""
    opts = dict(limit=400, epsabs=1e-15, epsrel=1e-12)
    if anchor is not None and a >= anchor:
        lo, hi = _log_or_minf(a - anchor), math.log(b - anchor)
        val, _ = integrate.quad(lambda t: h(anchor + math.exp(t)) * math.exp(t), lo, hi, **opts)
    elif anchor is not None and b <= anchor:
        lo, hi = _log_or_minf(anchor - b), math.log(anchor - a)
        val, _ = integrate.quad(lambda t: h(anchor - math.exp(t)) * math.exp(t), lo, hi, **opts)
    else:
        val, _ = integrate.quad(h, a, b, **opts)
    return val


def gaussian_moment(g: SmoothMap, p: float, cutoff: float = 0.0, bound: float = 10.0,
                    singular_point: float = 0.0, breakpoints: Sequence[float] = (1.0,)) -> float:
    """``∫ |g(x)|^p φ(x) dx`` over ``[-bound, bound]`` minus ``(s-c, s+c)``.

    Pieces that end at ``s ± c`` are integrated in log-distance coordinates,
    including ``c = 0`` where the integral runs up to the singular point.
    """

    def h(x):
        return abs(float(g(np.float64(x)))) ** p * float(_gauss_pdf(x))

    s = singular_point
    cuts = sorted({-bound, bound, *[b for b in breakpoints if -bound < b < bound]})
    cuts = sorted(set(cuts) | {s - cutoff, s + cutoff})
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        if cutoff > 0 and a >= s - cutoff and b <= s + cutoff:
            continue
        anchor = s if (a == s + cutoff or b == s - cutoff) else None
        total += _integrate_piece(h, a, b, anchor)
    if not math.isfinite(total):
        raise NumericalFailure("non-finite quadrature value",
                               {"p": p, "cutoff": cutoff, "value": total})
    return total


def moment_table_quadrature(g: SmoothMap | str, p_grid: Sequence[float],
                            cutoff_sweep: Sequence[float] = DEFAULT_CUTOFFS,
                            bound: float = 10.0, singular_point: float = 0.0,
                            breakpoints: Sequence[float] = (1.0,),
                            ratio: float = 0.5) -> MomentTable:
    """``E|g(Z)|^p`` for each ``p`` with a cutoff sweep around ``singular_point``.

    The sweep integrates with the window ``(s - c, s + c)`` removed for each
    cutoff ``c`` (largest first). A moment is flagged divergent when the last
    increment of the sweep is at least ``ratio`` times the first; otherwise the
    value at the smallest cutoff is reported. ``slopes`` holds the least-squares
    growth of the sweep per unit of ``-log10(c)``. A convergent moment is
    reported from the full integral (no window), not the last sweep value.
    """
    if isinstance(g, str):
        g = from_name(g)
    cutoffs = tuple(sorted(cutoff_sweep, reverse=True))
    table = MomentTable(tuple(p_grid), [], [], cutoffs)
    for p in p_grid:
        sweep = [gaussian_moment(g, p, c, bound, singular_point, breakpoints) for c in cutoffs]
        steps = np.diff(sweep)
        divergent = bool(steps.size >= 2 and steps[0] > 0 and steps[-1] >= ratio * steps[0])
        k = -np.log10(cutoffs)
        slope = float(np.polyfit(k, sweep, 1)[0]) if len(cutoffs) >= 2 else float("nan")
        table.sweeps.append(sweep)
        table.slopes.append(slope)
        table.divergent.append(divergent)
        table.values.append(math.inf if divergent
                            else gaussian_moment(g, p, 0.0, bound, singular_point, breakpoints))
    return table


def moment_mc(g: SmoothMap | str, p: float, N: int, rng: RngStream) -> tuple[float, float]:
    """Plain Monte Carlo ``E|g(Z)|^p`` with its standard error."""
    if isinstance(g, str):
        g = from_name(g)
    z = rng.normals(0, N, 1)[:, 0]
    y = np.abs(g(z)) ** p
    return float(y.mean()), float(y.std(ddof=1) / math.sqrt(N))


# -- Meyer ratio -------------------------------------------------------------

@dataclass
class MeyerRatioReport:
    p_grid: tuple
    ratios: list
    stderrs: list
    excluded: list
    power: float = 5.0

    @property
    def max_ratio(self) -> float:
        ok = [r for r in self.ratios if math.isfinite(r)]
        return max(ok) if ok else math.nan


def double_factorial(n: int) -> int:
    return math.prod(range(n, 0, -2)) if n > 0 else 1


def gaussian_meyer_ratio(p: int, power: float = 5.0) -> float:
    """Exact ratio for a deterministic integrand and even ``p``."""
    return double_factorial(p - 1) ** (1.0 / p) / p**power


def meyer_ratio(u, p_grid: Sequence[float], N: int, rng: RngStream,
                threads: int | None = None, power: float = 5.0) -> MeyerRatioReport:
    """``(E|δu|^p)^{1/p} / (p^power (‖u‖_{L^p(Ω,H)} + ‖Du‖_{L^p(Ω,H⊗H)}))``.

    When the integrand's maps are singular, grid points where any of the
    three moments looks divergent are excluded (ratio ``nan``) and listed in
    ``excluded``.
    """
    may_diverge = _may_diverge(u, 1)
    dt = u.grid.dt
    w = np.einsum("i,j->ij", dt, dt)

    def chunk(a, b):
        path = sample_path(u.grid, u.dim, rng, n=b - a, start=a)
        delta = np.asarray(skorohod_integral(u, path).value)
        vals = u.values(path)
        unorm = np.sqrt(np.einsum("...ik,i->...", vals * vals, dt))
        D = u.derivative(path)
        dnorm = np.sqrt(np.einsum("...ikjl,ij->...", D * D, w))
        return np.stack([np.abs(delta), unorm, dnorm], axis=-1)

    S = concat(map_chunks(chunk, N, threads))
    report = MeyerRatioReport(tuple(p_grid), [], [], [], power)
    for p in p_grid:
        Y = S**p
        if may_diverge and any(truncation_sweep(Y[:, j])["divergent"] for j in range(3)):
            report.ratios.append(math.nan)
            report.stderrs.append(math.nan)
            report.excluded.append(p)
            continue
        m = Y.mean(axis=0)
        roots = m ** (1.0 / p)
        denom = p**power * (roots[1] + roots[2])
        ratio = roots[0] / denom
        with np.errstate(divide="ignore"):
            d_root = np.where(m > 0, (1.0 / p) * m ** (1.0 / p - 1.0), 0.0)
        grad = np.array([
            d_root[0] / denom,
            -ratio / (roots[1] + roots[2]) * d_root[1],
            -ratio / (roots[1] + roots[2]) * d_root[2],
        ])
        report.ratios.append(float(ratio))
        report.stderrs.append(_delta_se(Y, grad))
    return report


# -- speed exponent bounds ---------------------------------------------------

@dataclass(frozen=True)
class RatePrediction:
    theorem_id: str
    inputs: dict
    alpha_sup: float
    kappa_hat1: float | None = None
    kappa_hat2: float | None = None

    def to_row(self) -> dict:
        row = {"theorem_id": self.theorem_id, **self.inputs, "alpha_sup": float(self.alpha_sup)}
        if self.kappa_hat1 is not None:
            row.update(kappa_hat1=float(self.kappa_hat1), kappa_hat2=float(self.kappa_hat2))
        return row


_RATE_ARGS = {
    "thm2": ("kappa1", "kappa2"),
    "thm3": ("kbar1", "kbar2", "kbar3", "kbar4"),
    "thm41": ("kappa1", "kappa2"),
    "thm42": ("kappa1", "kappa2"),
}


def _require(cond: bool, theorem_id: str, bound: str, value):
    if not cond:
        raise ValueError(f"{theorem_id}: hypothesis {bound} violated (got {value})")


def predict_rate(theorem_id: str, kappas, denominator: float = 5) -> RatePrediction:
    """Supremum of admissible speed exponents ``α`` for ``v(ε) = ε^α``.

    ``kappas`` is a sequence in the order of ``_RATE_ARGS[theorem_id]`` or a
    mapping with those names. Exact inputs (ints, Fractions) give exact output.
    ``denominator`` is the moment-growth order of the Meyer constant (5 by
    default); it enters every theorem except ``thm3``, whose constants are
    fixed.
    """
    if theorem_id not in _RATE_ARGS:
        raise ValueError(f"unknown theorem_id {theorem_id!r}; valid: {', '.join(_RATE_ARGS)}")
    names = _RATE_ARGS[theorem_id]
    if isinstance(kappas, dict):
        missing = [n for n in names if n not in kappas]
        if missing:
            raise ValueError(f"{theorem_id}: missing {', '.join(missing)}")
        vals = [kappas[n] for n in names]
    else:
        vals = list(kappas)
        if len(vals) != len(names):
            raise ValueError(f"{theorem_id} takes {len(names)} exponents {names}")
    half = Fraction(1, 2)
    inputs = dict(zip(names, vals))
    if _is_exact(vals + [denominator]):
        vals = [Fraction(v) for v in vals]
        denominator = Fraction(denominator)

    if theorem_id == "thm3":
        k1, k2, k3, k4 = vals
        _require(k1 > -half, theorem_id, "kbar1 > -1/2", k1)
        _require(k3 > -half, theorem_id, "kbar3 > -1/2", k3)
        _require(k2 >= 0, theorem_id, "kbar2 >= 0", k2)
        _require(k4 >= 0, theorem_id, "kbar4 >= 0", k4)
        kh1 = min(k1 + k3, 2 * k3) / 2
        kh2 = max(6 + k2 + k4, 1 + 2 * k4) / 2
        return RatePrediction(theorem_id, inputs, _exact((half + kh1) / kh2, vals),
                              _exact(kh1, vals), _exact(kh2, vals))

    k1, k2 = vals
    _require(k2 >= 0, theorem_id, "kappa2 >= 0", k2)
    if theorem_id == "thm41":
        _require(k1 > half, theorem_id, "kappa1 > 1/2", k1)
        alpha = (k1 - half) / (denominator + k2)
    else:
        _require(k1 > -half, theorem_id, "kappa1 > -1/2", k1)
        alpha = (half + k1) / (denominator + k2)
    return RatePrediction(theorem_id, inputs, _exact(alpha, vals + [denominator]))


def _is_exact(values) -> bool:
    return all(isinstance(v, (int, Fraction)) and not isinstance(v, bool) for v in values)


def _exact(x, inputs):
    """Keep Fractions when every input was exact, floats otherwise."""
    return Fraction(x) if _is_exact(inputs) else float(x)

"""Batch experiment runner.

    skortight list
    skortight run <experiment> --config FILE [--seed S] [--out DIR] [--threads T]

A run writes one or more CSV files plus ``manifest.json`` into the output
directory. The exit status is 0 when every built-in check passes, 1 when one
fails, 2 for a usage or configuration error and 3 for a numerical failure
(diagnostics are then written to ``diagnostics.json``).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path
from typing import Callable

import numpy as np
import yaml
from scipy import stats

from . import __version__
from .grid import kernel_norm, make_grid, sample_path
from .moments import (
    NumericalFailure,
    estimate_norm,
    fit_growth,
    gaussian_meyer_ratio,
    meyer_ratio,
    moment_table_quadrature,
    predict_rate,
    _RATE_ARGS,
)
from .rng import THREADS_ENV, RngStream, concat, map_chunks
from .skorohod import StepIntegrand, duality_residual, sample_integrals, skorohod_integral
from .suites import duality_pairs, gaussian_kernels, meyer_suite, scaled_wiener_family
from .tightness import (
    FamilySpec,
    app_decompose,
    weight_bound_check,
    bounded_adapted,
    counterexample,
    deterministic_gaussian,
    langevin_app,
    langevin_variance_closed_form,
    schilder_bound_check,
    speed_scan,
    tail_mc,
    tail_quadrature,
    thm1_closed_form,
    thm1_integrand,
)


class UsageError(ValueError):
    pass


# -- configuration -----------------------------------------------------------

_FAMILY_KEYS = {
    "counterexample_thm1": set(),
    "deterministic_gaussian": set(),
    "bounded_adapted": {"K", "dim"},
    "langevin_app": {"kappa0", "a", "sigma", "x0"},
}


def _logspace(hi_exp: float, lo_exp: float, n: int) -> list[float]:
    return [float(v) for v in np.logspace(hi_exp, lo_exp, n)]


_DEFAULTS: dict[str, dict] = {
    "duality": {"n_cells": 4, "N": 100_000},
    "gaussian-law": {"n_cells": 4, "N": 100_000},
    "tails": {"n_cells": 1, "N": 100_000, "family": {"id": "deterministic_gaussian"},
              "eps": [0.5, 0.25, 0.1], "L": [1.0, 1.5], "method": "both"},
    "speed-scan": {"n_cells": 1, "family": {"id": "deterministic_gaussian"},
                   "eps": _logspace(-1, -4, 7), "L": [1.0, 2.0], "alpha": [0.5, 1.0, 2.0],
                   "method": "quadrature"},
    "moments": {"n_cells": 1, "N": 100_000, "p": [2.0, 4.0, 6.0],
                "eps": [2.0**-k for k in range(1, 6)]},
    "meyer": {"n_cells": 4, "N": 100_000, "p": [2.0, 4.0, 6.0, 8.0]},
    "rates": {"rates": [{"theorem": "thm2", "kappa1": 0, "kappa2": 0},
                        {"theorem": "thm3", "kbar1": 0, "kbar2": 0, "kbar3": 0, "kbar4": 0},
                        {"theorem": "thm41", "kappa1": 1, "kappa2": 0},
                        {"theorem": "thm42", "kappa1": 0, "kappa2": 0}],
              "denominator": 5},
    "app-langevin": {"n_cells": 256, "N": 1000,
                     "family": {"id": "langevin_app", "kappa0": 1.0, "a": 0.5,
                                "sigma": 1.0, "x0": 0.0},
                     "eps": [0.25, 0.1]},
    "counterexample": {"n_cells": 1, "N": 1000, "eps": _logspace(-2, -6, 9), "L": [5.0],
                       "alpha": [0.5], "method": "quadrature"},
}


@dataclass
class RunConfig:
    experiment: str
    seed: int = 0
    n_cells: int = 1
    N: int = 0
    family: dict = field(default_factory=dict)
    eps: list = field(default_factory=list)
    L: list = field(default_factory=list)
    p: list = field(default_factory=list)
    alpha: list = field(default_factory=list)
    method: str = "quadrature"
    rates: list = field(default_factory=list)
    denominator: float = 5
    out: str = "runs"

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data or {})
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise UsageError(f"unknown config key {unknown[0]!r}")
        name = data.get("experiment")
        if name not in EXPERIMENTS:
            raise UsageError(f"unknown experiment {name!r}; valid: {', '.join(EXPERIMENTS)}")
        merged = {**_DEFAULTS[name], **data}
        try:
            cfg = cls(
                experiment=name,
                seed=int(merged.get("seed", 0)),
                n_cells=int(merged.get("n_cells", 1)),
                N=int(float(merged.get("N", 0))),
                family=dict(merged.get("family", {})),
                eps=[float(v) for v in merged.get("eps", [])],
                L=[float(v) for v in merged.get("L", [])],
                p=[float(v) for v in merged.get("p", [])],
                alpha=[float(v) for v in merged.get("alpha", [])],
                method=str(merged.get("method", "quadrature")),
                rates=[dict(r) for r in merged.get("rates", [])],
                denominator=merged.get("denominator", 5),
                out=str(merged.get("out", "runs")),
            )
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid config value: {exc}") from None
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def validate(self):
        if self.seed < 0:
            raise UsageError("seed must be >= 0")
        if self.n_cells < 1:
            raise UsageError("n_cells must be >= 1")
        if any(not e > 0 for e in self.eps):
            raise UsageError("eps values must be > 0")
        if any(not v >= 0 for v in self.L):
            raise UsageError("L values must be >= 0")
        if any(not v >= 1 for v in self.p):
            raise UsageError("p values must be >= 1")
        if any(not v > 0 for v in self.alpha):
            raise UsageError("alpha values must be > 0")
        if self.method not in ("mc", "quadrature", "both"):
            raise UsageError(f"method must be mc, quadrature or both, got {self.method!r}")
        if self.family:
            fid = self.family.get("id")
            if fid not in _FAMILY_KEYS:
                raise UsageError(f"unknown family id {fid!r}; valid: {', '.join(_FAMILY_KEYS)}")
            extra = sorted(set(self.family) - _FAMILY_KEYS[fid] - {"id"})
            if extra:
                raise UsageError(f"unknown config key 'family.{extra[0]}' for {fid}")
        for i, entry in enumerate(self.rates):
            thm = entry.get("theorem")
            if thm not in _RATE_ARGS:
                raise UsageError(f"rates[{i}].theorem must be one of {', '.join(_RATE_ARGS)}")
            extra = sorted(set(entry) - set(_RATE_ARGS[thm]) - {"theorem"})
            if extra:
                raise UsageError(f"unknown config key 'rates[{i}].{extra[0]}'")
        minimum = {"duality": 100, "gaussian-law": 100, "moments": 100, "meyer": 100,
                   "app-langevin": 100, "counterexample": 1}
        if self.experiment in minimum and self.N < minimum[self.experiment]:
            raise UsageError(f"N must be >= {minimum[self.experiment]} for {self.experiment}")
        if self.experiment == "tails" and self.method != "quadrature" and self.N < 1000:
            raise UsageError("N must be >= 1000 for Monte Carlo tails")
        if self.experiment in ("speed-scan", "counterexample") and len(self.eps) < 5:
            raise UsageError("eps needs >= 5 points spanning >= 2 decades")
        if self.experiment == "app-langevin" and self.n_cells < 2**8:
            raise UsageError("n_cells must be >= 256 for app-langevin")


def load_config(path: str | os.PathLike, experiment: str | None = None,
                overrides: dict | None = None) -> RunConfig:
    text = Path(path).read_text()
    data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise UsageError("config must be a mapping")
    if experiment is not None:
        if data.get("experiment", experiment) != experiment:
            raise UsageError(f"config is for {data['experiment']!r}, not {experiment!r}")
        data["experiment"] = experiment
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig.from_dict(data)


# -- results -----------------------------------------------------------------

@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def to_dict(self) -> dict:
        return {"name": self.name, "pass": bool(self.passed), "detail": self.detail}


@dataclass
class Outcome:
    tables: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)

    def table(self, name: str, rows: list[dict]):
        self.tables[name] = rows

    def check(self, name: str, passed, detail: str = ""):
        self.checks.append(Check(name, bool(passed), detail))


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, Fraction):
        v = float(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "" if v is None else str(v)


def to_csv(rows: list[dict]) -> str:
    columns: list[str] = []
    for row in rows:
        columns += [c for c in row if c not in columns]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def _family(cfg: RunConfig) -> FamilySpec:
    prm = {k: v for k, v in cfg.family.items() if k != "id"}
    fid = cfg.family.get("id", "deterministic_gaussian")
    if fid == "counterexample_thm1":
        return counterexample()
    if fid == "deterministic_gaussian":
        return deterministic_gaussian()
    if fid == "bounded_adapted":
        return bounded_adapted(float(prm.get("K", 1.0)), int(prm.get("dim", 1)),
                               max(cfg.n_cells, 1))
    return langevin_app(n_cells=cfg.n_cells, **{k: float(v) for k, v in prm.items()})


# -- experiments -------------------------------------------------------------

def run_duality(cfg: RunConfig, rng: RngStream, threads: int | None) -> Outcome:
    out = Outcome()
    rows = []
    for j, (name, (F, u)) in enumerate(duality_pairs(cfg.n_cells).items()):
        r = duality_residual(F, u, cfg.N, rng.child(j), threads)
        rows.append({"pair": name, "adapted": u.adapted, "lhs": r.lhs, "rhs": r.rhs,
                     "residual": r.residual, "lhs_se": r.lhs_stderr, "rhs_se": r.rhs_stderr,
                     "residual_se": r.residual_stderr, "z": r.z_score, "N": r.n_samples})
        out.check(f"duality:{name}", abs(r.z_score) <= 3.0, f"z = {r.z_score:.3f}")
    out.table("duality", rows)
    return out


def run_gaussian_law(cfg: RunConfig, rng: RngStream, threads: int | None) -> Outcome:
    out = Outcome()
    rows = []
    for j, (name, h) in enumerate(gaussian_kernels(cfg.n_cells).items()):
        norm = float(kernel_norm(h))
        x = sample_integrals(StepIntegrand.deterministic(h), cfg.N, rng.child(j), threads)
        ks = stats.kstest(x, "norm", args=(0.0, norm))
        rows.append({"kernel": name, "dim": h.dim, "norm": norm, "mean": float(x.mean()),
                     "var": float(x.var(ddof=1)), "ks_stat": float(ks.statistic),
                     "p_value": float(ks.pvalue), "N": cfg.N})
        out.check(f"ks:{name}", ks.pvalue >= 0.01, f"p = {ks.pvalue:.4f}")
    out.table("gaussian_law", rows)
    return out


def _tail_row(family: str, pt, alpha=0.0, value=None) -> dict:
    return {"family": family, "method": pt.method, "alpha": alpha, "L": pt.L, "eps": pt.eps,
            "p_est": pt.p_est, "ci_lo": pt.ci_lo, "ci_hi": pt.ci_hi,
            "value": pt.log_value if value is None else value,
            "hits": pt.hits, "n": pt.n, "flagged": pt.flagged}


def run_tails(cfg: RunConfig, rng: RngStream, threads: int | None) -> Outcome:
    out = Outcome()
    fam = _family(cfg)
    has_quad = fam.family_id in ("counterexample_thm1", "deterministic_gaussian")
    methods = ["mc", "quadrature"] if cfg.method == "both" else [cfg.method]
    if "quadrature" in methods and not has_quad:
        raise UsageError(f"family {fam.family_id} has no quadrature oracle; use method: mc")
    rows, covered, compared = [], 0, 0
    k = 0
    for L in cfg.L:
        for eps in cfg.eps:
            pts = {}
            if "mc" in methods:
                pts["mc"] = tail_mc(fam, eps, L, cfg.N, rng.child(k), threads)
                k += 1
            if "quadrature" in methods:
                pts["quadrature"] = tail_quadrature(fam, eps, L)
            for pt in pts.values():
                rows.append(_tail_row(fam.family_id, pt))
            if len(pts) == 2:
                compared += 1
                q = pts["quadrature"].p_est
                covered += pts["mc"].ci_lo <= q <= pts["mc"].ci_hi
    out.table("tails", rows)
    ok = all(0.0 <= r["p_est"] <= 1.0 and r["ci_lo"] <= r["ci_hi"] for r in rows)
    out.check("probabilities_in_unit_interval", ok)
    if compared:
        frac = covered / compared
        out.check("mc_interval_covers_quadrature", frac >= 0.95,
                  f"{covered}/{compared} points covered")
    if fam.family_id == "bounded_adapted":
        srows = []
        K, d = fam.params["K"], fam.dim
        for L in cfg.L:
            for eps in cfg.eps:
                rep = schilder_bound_check(K, d, eps, L, cfg.N, rng.child(k), cfg.n_cells,
                                           threads)
                k += 1
                srows.append({"K": K, "d": d, "eps": eps, "L": L, "bound": rep.bound,
                              "log_bound": rep.log_bound, "hits": rep.point.hits,
                              "ci_hi": rep.point.ci_hi, "passed": rep.passed,
                              "certified": rep.certified, "reason": rep.reason})
                out.check(f"schilder:eps={eps:g},L={L:g}", rep.passed, rep.reason)
        out.table("schilder", srows)
    return out


def _scan_all(cfg: RunConfig, fam: FamilySpec, rng: RngStream, threads):
    method = "quadrature" if cfg.method == "both" else cfg.method
    scans = {}
    k = 0
    for L in cfg.L:
        for alpha in cfg.alpha:
            # the same child stream for every alpha: α only rescales the values
            scans[(alpha, L)] = speed_scan(fam, alpha, L, cfg.eps, method, cfg.N or None,
                                           rng.child(k), threads)
        k += 1
    return scans


def _scan_rows(scans) -> list[dict]:
    rows = []
    for scan in scans.values():
        rows += scan.rows()
    return rows


def _trend_rows(scans) -> list[dict]:
    return [{"family": s.family, "alpha": a, "L": L, "first": s.trend["first"],
             "last": s.trend["last"], "monotonicity_violations": s.trend["monotonicity_violations"],
             "log_p_slope": s.trend["log_p_slope"], "speed_slope": s.trend["speed_slope"],
             "flagged": s.flagged}
            for (a, L), s in scans.items()]


def run_speed_scan(cfg: RunConfig, rng: RngStream, threads: int | None) -> Outcome:
    out = Outcome()
    fam = _family(cfg)
    scans = _scan_all(cfg, fam, rng, threads)
    out.table("speed_scan", _scan_rows(scans))
    out.table("speed_scan_trend", _trend_rows(scans))
    nonpos = all(v <= 0 for (a, L), s in scans.items() for v, pt in zip(s.values, s.points)
                 if pt.p_est < 1)
    out.check("values_nonpositive", nonpos)
    alphas = sorted(cfg.alpha)
    mono = True
    for L in cfg.L:
        for lo, hi in zip(alphas[:-1], alphas[1:]):
            a, b = np.abs(scans[(lo, L)].values), np.abs(scans[(hi, L)].values)
            mono &= bool(np.all(b <= a))
    out.check("magnitude_nonincreasing_in_alpha", mono)
    if fam.family_id == "deterministic_gaussian" and 1.0 in cfg.alpha:
        hn = float(kernel_norm(fam.params["h"]))
        for L in cfg.L:
            s = scans[(1.0, L)]
            target = -L**2 / (2 * hn**2)
            rel = abs(s.values[-1] - target) / abs(target) if target else 0.0
            out.check(f"gaussian_alpha1_limit:L={L:g}", rel <= 0.05 and s.eps_grid[-1] <= 1e-4,
                      f"eps = {s.eps_grid[-1]:g}, value = {s.values[-1]:.6g}, "
                      f"target = {target:.6g}, rel = {rel:.4f}")
    return out


def run_counterexample(cfg: RunConfig, rng: RngStream, threads: int | None) -> Outcome:
    out = Outcome()
    scans = _scan_all(cfg, counterexample(), rng, threads)
    out.table("speed_scan", _scan_rows(scans))
    out.table("speed_scan_trend", _trend_rows(scans))
    for (alpha, L), s in scans.items():
        first, last = abs(s.trend["first"]), abs(s.trend["last"])
        out.check(f"approaches_zero:alpha={alpha:g},L={L:g}", last < 0.2 * first,
                  f"|last|/|first| = {last / first:.4f}")
    for L in cfg.L:
        slope = scans[(cfg.alpha[0], L)].trend["log_p_slope"]
        out.check(f"log_p_slope:L={L:g}", abs(slope - 2.0) <= 0.1, f"slope = {slope:.6f}")
    # pathwise closed form at the largest eps
    eps = max(cfg.eps)
    u = thm1_integrand(make_grid(cfg.n_cells))

    def chunk(a, b):
        path = sample_path(u.grid, 1, rng.child(10_000), n=b - a, start=a)
        direct = np.sqrt(eps) * np.asarray(skorohod_integral(u, path).value)
        return np.abs(direct - thm1_closed_form(path.terminal()[..., 0], eps))

    diff = float(np.max(concat(map_chunks(chunk, cfg.N, threads))))
    out.check("closed_form_pathwise", diff <= 1e-12, f"max |diff| = {diff:.3e}")
    return out


def run_moments(cfg: RunConfig, rng: RngStream, threads: int | None) -> Outcome:
    out = Outcome()
    table = moment_table_quadrature("thm1_fprime", [2.0, 4.0])
    rows = []
    for p, sweep, slope, div in zip(table.p_grid, table.sweeps, table.slopes, table.divergent):
        for c, v in zip(table.cutoffs, sweep):
            rows.append({"g": "thm1_fprime", "p": p, "cutoff": c, "value": v,
                         "divergent": div, "sweep_slope": slope})
    out.table("moment_table", rows)
    m2 = table.value(2.0)
    lower = 0.75**2 / (math.sqrt(2 * math.e * math.pi) * (1 - 2 / 4))
    out.check("second_moment", abs(m2 - 0.409) <= 1e-3 and m2 >= lower,
              f"E|f'(Z)|^2 = {m2:.9f}, lower bound = {lower:.6f}")
    oracle = 0.75**4 * math.log(10) / math.sqrt(2 * math.pi)
    slope4 = table.slopes[1]
    out.check("p4_divergence", table.divergent[1] and abs(slope4 / oracle - 1) <= 0.2,
              f"slope = {slope4:.6f}, oracle = {oracle:.6f}")

    fam = scaled_wiener_family(cfg.n_cells)
    ests, k = [], 0
    for p in cfg.p:
        for eps in cfg.eps:
            ests.append(estimate_norm(fam, eps, "Lp_Omega_H", p, cfg.N, rng.child(k), threads))
            k += 1
    div = estimate_norm(lambda eps: thm1_integrand(make_grid(cfg.n_cells)), 1.0,
                        "Lp_Omega_HxH", 4.0, cfg.N, rng.child(k), threads)
    out.table("norms", [e.to_row() | {"family": "scaled_wiener", "divergent": e.divergent}
                        for e in ests]
              + [div.to_row() | {"family": "thm1", "divergent": div.divergent}])
    if len(set(cfg.eps)) >= 3 and len(set(cfg.p)) >= 3:
        fit = fit_growth(ests)
        out.table("growth_fit", [{"family": "scaled_wiener", "kappa_eps": fit.kappa_eps,
                                  "kappa_p": fit.kappa_p, "intercept": fit.intercept,
                                  "r2": fit.r2}])
        out.check("kappa_eps", abs(fit.kappa_eps - 1.0) <= 0.05,
                  f"kappa_eps = {fit.kappa_eps:.4f}")
    out.check("thm1_Du_L4_divergent", div.divergent, f"estimate = {div.value:.4g}")
    return out


def run_meyer(cfg: RunConfig, rng: RngStream, threads: int | None) -> Outcome:
    out = Outcome()
    rows = []
    for j, (name, u) in enumerate(meyer_suite(cfg.n_cells).items()):
        rep = meyer_ratio(u, cfg.p, cfg.N, rng.child(j), threads)
        for p, r, se in zip(rep.p_grid, rep.ratios, rep.stderrs):
            exact = gaussian_meyer_ratio(int(p)) if name == "deterministic" and p % 2 == 0 else None
            rows.append({"integrand": name, "p": p, "ratio": r, "stderr": se,
                         "excluded": p in rep.excluded, "closed_form": exact})
            if exact is not None:
                out.check(f"closed_form:p={p:g}", abs(r - exact) <= 4 * se,
                          f"ratio = {r:.6g}, exact = {exact:.6g}, se = {se:.3g}")
        out.check(f"max_ratio_below_1:{name}", rep.max_ratio < 1.0,
                  f"max ratio = {rep.max_ratio:.4g}")
    out.table("meyer", rows)
    return out


def run_rates(cfg: RunConfig, rng: RngStream, threads: int | None) -> Outcome:
    out = Outcome()
    rows = []
    for entry in cfg.rates:
        thm = entry["theorem"]
        kappas = {k: (Fraction(str(v)) if not isinstance(v, bool) else v)
                  for k, v in entry.items() if k != "theorem"}
        try:
            pred = predict_rate(thm, kappas, Fraction(str(cfg.denominator)))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        row = {"theorem_id": thm}
        row.update({k: kappas.get(k) for k in _RATE_ARGS[thm]})
        row.update(denominator=cfg.denominator, alpha_sup=pred.alpha_sup,
                   alpha_sup_exact=str(pred.alpha_sup),
                   kappa_hat1=pred.kappa_hat1, kappa_hat2=pred.kappa_hat2)
        rows.append(row)
        out.check(f"alpha_positive:{thm}", pred.alpha_sup > 0, f"alpha_sup = {pred.alpha_sup}")
    out.table("rates", rows)
    return out


_WEIGHT_BOUND_EPS = (1e-1, 1e-2, 1e-3)


def run_app_langevin(cfg: RunConfig, rng: RngStream, threads: int | None) -> Outcome:
    out = Outcome()
    prm = {k: float(v) for k, v in cfg.family.items() if k != "id"}
    base = {"kappa0": 1.0, "a": 0.5, "sigma": 1.0, "x0": 0.0, **prm}
    levels = [cfg.n_cells, 2 * cfg.n_cells, 4 * cfg.n_cells]
    fine = make_grid(levels[-1])
    rows, dec_rows = [], []
    for j, eps in enumerate(cfg.eps):
        def chunk(a, b, eps=eps, j=j):
            path = sample_path(fine, 1, rng.child(j), n=b - a, start=a)
            paths = [path.coarsen(4), path.coarsen(2), path]
            decs = [app_decompose(eps, p, base) for p in paths]
            gap = max(float(np.max(np.abs(d.total - d.direct))) for d in decs)
            ok = all(d.apriori_ok for d in decs)
            return np.column_stack([np.stack([d.total for d in decs], -1),
                                    np.full(b - a, gap), np.full(b - a, float(ok))])

        res = concat(map_chunks(chunk, cfg.N, threads, chunk=256))
        F = res[:, :3]
        d1 = math.sqrt(float(np.mean((F[:, 0] - F[:, 1]) ** 2)))
        d2 = math.sqrt(float(np.mean((F[:, 1] - F[:, 2]) ** 2)))
        factor = d1 / d2 if d2 > 0 else math.inf
        gap = float(np.max(res[:, 3]))
        rows.append({"eps": eps, "n_coarse": levels[0], "l2_diff_coarse": d1,
                     "l2_diff_fine": d2, "factor": factor, "N": cfg.N})
        dec_rows.append({"eps": eps, "max_abs_total_minus_direct": gap,
                         "apriori_ok": bool(np.all(res[:, 4] == 1.0)),
                         "mean_F": float(np.mean(F[:, 2])), "var_F": float(np.var(F[:, 2], ddof=1))})
        out.check(f"cauchy_factor:eps={eps:g}", factor >= 1.3, f"factor = {factor:.4f}")
        out.check(f"decomposition:eps={eps:g}", gap <= 1e-10, f"max gap = {gap:.3e}")
        out.check(f"apriori_bound:eps={eps:g}", dec_rows[-1]["apriori_ok"])
    out.table("cauchy", rows)
    out.table("decomposition", dec_rows)

    grid = make_grid(cfg.n_cells)
    deg_rows = []
    for j, (case, over) in enumerate((("sigma0", {"sigma": 0.0}), ("a0", {"a": 0.0}))):
        params = {**base, **over}
        for m, eps in enumerate(cfg.eps):
            def chunk(a, b, eps=eps, params=params, s=100 + 10 * j + m):
                path = sample_path(grid, 1, rng.child(s), n=b - a, start=a)
                d = app_decompose(eps, path, params)
                return np.column_stack([d.total, d.f2])

            res = concat(map_chunks(chunk, cfg.N, threads))
            x, f2 = res[:, 0], res[:, 1]
            var = float(np.var(x, ddof=1))
            m4 = float(np.mean((x - x.mean()) ** 4))
            se = math.sqrt(max(m4 - var**2, 0.0) / cfg.N)
            exact = langevin_variance_closed_form(grid, eps, **params)
            f2max = float(np.max(np.abs(f2)))
            deg_rows.append({"case": case, "eps": eps, "var_mc": var, "var_se": se,
                             "var_closed_form": exact, "max_abs_f2": f2max})
            out.check(f"closed_form_variance:{case}:eps={eps:g}", abs(var - exact) <= 3 * se,
                      f"var = {var:.6g}, exact = {exact:.6g}, se = {se:.3g}")
            out.check(f"trace_part_zero:{case}:eps={eps:g}", f2max == 0.0)
    out.table("degenerate", deg_rows)

    wb_rows = []
    for eps in _WEIGHT_BOUND_EPS:
        val, bound, ok = weight_bound_check(eps, base["kappa0"])
        wb_rows.append({"eps": eps, "integral": val, "bound": bound, "holds": ok})
        out.check(f"weight_bound:eps={eps:g}", ok, f"integral = {val:.6g}, bound = {bound:.6g}")
    out.table("weight_bound", wb_rows)
    return out


@dataclass(frozen=True)
class Experiment:
    name: str
    anchor: str
    description: str
    run: Callable[[RunConfig, RngStream, int | None], Outcome]


EXPERIMENTS: dict[str, Experiment] = {e.name: e for e in (
    Experiment("duality", "duality: E(F delta(u)) = E(<DF, u>_H)",
               "duality residual for five canonical (F, u) pairs", run_duality),
    Experiment("gaussian-law", "divergence of a deterministic integrand: delta(h) = W(h)",
               "KS test of delta(u) against N(0, |u|_H^2) for three kernels", run_gaussian_law),
    Experiment("tails", "exponential tightness with speed v(eps): P(|F_eps| > L)",
               "tail probabilities P(|F_eps| > L) by Monte Carlo and quadrature", run_tails),
    Experiment("speed-scan", "Schilder-type bound: eps log P -> -L^2/2 for the Gaussian baseline",
               "eps^alpha log P(|F_eps| > L) scans with trend summaries", run_speed_scan),
    Experiment("moments", "counterexample moments: E|f'(Z)|^p infinite for p >= 4",
               "moment table with cutoff sweep, norm estimates and growth fit", run_moments),
    Experiment("meyer", "Meyer inequality: K_p at most a constant multiple of p^5",
               "empirical Meyer ratios for three integrands", run_meyer),
    Experiment("rates", "speed-exponent theorems: alpha < (1/2 + kappa1)/(5 + kappa2) and variants",
               "exact speed-exponent bounds from moment-growth exponents", run_rates),
    Experiment("app-langevin", "Langevin application: F = F^(1) + F^(2)",
               "grid refinement, degenerate closed forms and the exponential-weight inequality",
               run_app_langevin),
    Experiment("counterexample", "counterexample: not exponentially tight with any speed",
               "quadrature speed scans and closed-form check of the counterexample",
               run_counterexample),
)}


def list_experiments() -> list[Experiment]:
    return list(EXPERIMENTS.values())


# -- running -----------------------------------------------------------------

def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def run(cfg: RunConfig, out_dir: str | os.PathLike | None = None,
        threads: int | None = None) -> dict:
    """Run one experiment, write its CSV files and manifest, return the manifest."""
    exp = EXPERIMENTS[cfg.experiment]
    out_dir = Path(out_dir if out_dir is not None else cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    outcome = exp.run(cfg, RngStream(cfg.seed), threads)
    elapsed = time.perf_counter() - t0
    results = []
    for name, rows in outcome.tables.items():
        fname = f"{cfg.experiment}_{name}.csv"
        data = to_csv(rows).encode()
        (out_dir / fname).write_bytes(data)
        results.append({"file": fname, "sha256": _digest(data)})
    manifest = {
        "config": cfg.to_dict(),
        "version": __version__,
        "started": started.isoformat(),
        "elapsed_s": elapsed,
        "results": results,
        "checks": [c.to_dict() for c in outcome.checks],
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="skortight", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("list", help="list the available experiments")
    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("experiment")
    r.add_argument("--config", required=True, help="YAML configuration file")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help="output directory")
    r.add_argument("--threads", type=int, help=f"worker threads (default ${THREADS_ENV} or 1)")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "list":
        for e in list_experiments():
            print(f"{e.name:<16}{e.description}  [{e.anchor}]")
        return 0
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return 2
        os.environ[THREADS_ENV] = str(args.threads)
    cfg = None
    try:
        if args.experiment not in EXPERIMENTS:
            raise UsageError(f"unknown experiment {args.experiment!r}; "
                             f"valid: {', '.join(EXPERIMENTS)}")
        cfg = load_config(args.config, args.experiment, {"seed": args.seed, "out": args.out})
        manifest = run(cfg, cfg.out, args.threads)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        out = Path(cfg.out if cfg is not None else args.out or "runs")
        out.mkdir(parents=True, exist_ok=True)
        (out / "diagnostics.json").write_text(
            json.dumps({"error": str(exc), "diagnostics": exc.diagnostics}, indent=2,
                       default=str) + "\n")
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    failed = [c for c in manifest["checks"] if not c["pass"]]
    for c in manifest["checks"]:
        print(f"{'PASS' if c['pass'] else 'FAIL'}  {c['name']}  {c['detail']}")
    print(f"{len(manifest['checks']) - len(failed)}/{len(manifest['checks'])} checks passed; "
          f"results in {cfg.out}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())

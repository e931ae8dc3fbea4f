"""Skorohod integrals of step integrands.

A step integrand is stored as a finite sum ``u(t) = Σ_q F_q h_q(t)`` of a
cylindrical functional times a deterministic kernel. Integration by parts
gives, term by term,

    δ(F h) = F W(h) - <DF, h>_H,

and since ``DF`` and ``h`` are piecewise constant the trace ``<DF, h>_H`` is an
exact cell sum. A coefficient per cell ``X_i^k 1_{cell_i}`` is the special case
where ``h`` is the indicator of one cell in one coordinate.

Any object exposing ``grid``, ``dim``, ``adapted``, ``values(path)`` and
``trace(path)`` can be integrated; the application module uses that to plug in
an integrand with hand-derived derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grid import BrownianPath, Kernel, TimeGrid, _check_same, indicator, kernel_inner, sample_path
from .malliavin import CylindricalFunctional, constant, derivative, eval_functional, second_derivative
from .rng import RngStream, concat, map_chunks


class StepIntegrand:
    """``u(t) = Σ_q F_q h_q(t)`` on a common grid."""

    def __init__(self, terms: Sequence[tuple[CylindricalFunctional, Kernel]]):
        terms = list(terms)
        if not terms:
            raise ValueError("an integrand needs at least one term")
        grid, dim = terms[0][1].grid, terms[0][1].dim
        for F, h in terms:
            _check_same(grid, dim, h.grid, h.dim)
            _check_same(grid, dim, F.grid, F.dim)
        self.terms = terms
        self.grid = grid
        self.dim = dim

    def __repr__(self):
        return f"StepIntegrand({len(self.terms)} terms, adapted={self.adapted})"

    @classmethod
    def from_cells(cls, coefficients) -> "StepIntegrand":
        """Build from ``coefficients[i][k]`` = functional on cell ``i``, coordinate ``k``."""
        first = coefficients[0][0]
        grid, dim = first.grid, first.dim
        if len(coefficients) != grid.n_cells:
            raise ValueError("need one coefficient row per cell")
        terms = []
        for i, row in enumerate(coefficients):
            for k, F in enumerate(row):
                terms.append((F, indicator(grid, grid.knots[i], grid.knots[i + 1], dim, k)))
        return cls(terms)

    @classmethod
    def product(cls, F: CylindricalFunctional, h: Kernel) -> "StepIntegrand":
        return cls([(F, h)])

    @classmethod
    def deterministic(cls, h: Kernel) -> "StepIntegrand":
        return cls([(constant(1.0, h.grid, h.dim), h)])

    @staticmethod
    def _term_adapted(F: CylindricalFunctional, h: Kernel) -> bool:
        if F.arity == 0:
            return True
        used = np.nonzero(np.any(h.values != 0.0, axis=-1))[0]
        if used.size == 0:
            return True
        return F.support_end() <= h.grid.knots[used[0]]

    @property
    def adapted(self) -> bool:
        return all(self._term_adapted(F, h) for F, h in self.terms)

    @property
    def deterministic_only(self) -> bool:
        return all(F.arity == 0 for F, _ in self.terms)

    def singular(self, order: int = 0) -> bool:
        """Whether some coefficient's jet up to ``order`` can be unbounded."""
        return any(F.map.singular(order) for F, _ in self.terms)

    def __add__(self, other: "StepIntegrand") -> "StepIntegrand":
        return StepIntegrand(self.terms + other.terms)

    def __mul__(self, a: float) -> "StepIntegrand":
        return StepIntegrand([(F, a * h) for F, h in self.terms])

    __rmul__ = __mul__

    def values(self, path: BrownianPath) -> np.ndarray:
        """``u`` on every cell, shape ``batch + (n_cells, dim)``."""
        out = np.zeros(path.batch_shape + (self.grid.n_cells, self.dim))
        for F, h in self.terms:
            f = np.asarray(eval_functional(F, path))
            out = out + f[..., None, None] * h.values
        return out

    def trace(self, path: BrownianPath) -> np.ndarray:
        """``Σ_q <DF_q, h_q>_H``; identically zero for adapted terms."""
        out = np.zeros(path.batch_shape)
        for F, h in self.terms:
            if self._term_adapted(F, h):
                continue
            out = out + kernel_inner(derivative(F, path), h)
        return out

    def derivative(self, path: BrownianPath) -> np.ndarray:
        """``D_s u(r)`` with shape ``batch + (n_r, d_r, n_s, d_s)``."""
        n, d = self.grid.n_cells, self.dim
        out = np.zeros(path.batch_shape + (n, d, n, d))
        for F, h in self.terms:
            if F.arity == 0:
                continue
            DF = derivative(F, path).values
            out = out + np.einsum("ik,...jl->...ikjl", h.values, DF)
        return out

    def second_derivative(self, path: BrownianPath) -> np.ndarray:
        """``D_t D_s u(r)`` with shape ``batch + (n_r, d_r, n_s, d_s, n_t, d_t)``."""
        n, d = self.grid.n_cells, self.dim
        out = np.zeros(path.batch_shape + (n, d, n, d, n, d))
        for F, h in self.terms:
            if F.arity == 0:
                continue
            D2 = second_derivative(F, path).values
            out = out + np.einsum("ik,...jlmo->...ikjlmo", h.values, D2)
        return out


@dataclass(frozen=True)
class SkorohodResult:
    value: np.ndarray | float
    ito_part: np.ndarray | float
    trace_part: np.ndarray | float


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def _ito_sum(u, path: BrownianPath):
    _check_same(u.grid, u.dim, path.grid, path.dim)
    return np.einsum("...ik,...ik->...", u.values(path), path.increments)


def skorohod_integral(u, path: BrownianPath) -> SkorohodResult:
    ito = _ito_sum(u, path)
    tr = np.asarray(u.trace(path)) if not u.adapted else np.zeros_like(ito)
    return SkorohodResult(_scalar(ito - tr), _scalar(ito), _scalar(tr))


def ito_integral(u, path: BrownianPath):
    """Left-point sum ``Σ X_i ΔW_i``; only defined for adapted integrands."""
    if not u.adapted:
        raise ValueError("ito_integral needs an adapted integrand")
    return _scalar(_ito_sum(u, path))


def h_inner(u, path: BrownianPath, k: Kernel) -> np.ndarray:
    """``<k, u>_H`` per path; ``k`` may carry the same batch axes as the path."""
    vals = u.values(path)
    return np.einsum("...ik,...ik,i->...", k.values, vals, u.grid.dt)


@dataclass(frozen=True)
class DualityReport:
    lhs: float
    rhs: float
    residual: float
    lhs_stderr: float
    rhs_stderr: float
    residual_stderr: float
    n_samples: int

    @property
    def z_score(self) -> float:
        if self.residual_stderr == 0.0:
            return 0.0 if self.residual == 0.0 else np.inf
        return self.residual / self.residual_stderr


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    n = x.size
    se = float(np.std(x, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return float(np.mean(x)), se


def duality_residual(F: CylindricalFunctional, u, N: int, rng: RngStream,
                     threads: int | None = None) -> DualityReport:
    """Estimate ``E[F δ(u)]`` and ``E<DF, u>_H`` on common paths."""
    if N < 100:
        raise ValueError("duality_residual needs N >= 100")

    def chunk(a, b):
        path = sample_path(u.grid, u.dim, rng, n=b - a, start=a)
        lhs = np.asarray(eval_functional(F, path)) * skorohod_integral(u, path).value
        rhs = h_inner(u, path, derivative(F, path))
        return np.stack([lhs, rhs], axis=-1)

    both = concat(map_chunks(chunk, N, threads))
    lhs, lhs_se = _mean_se(both[:, 0])
    rhs, rhs_se = _mean_se(both[:, 1])
    res, res_se = _mean_se(both[:, 0] - both[:, 1])
    return DualityReport(lhs, rhs, res, lhs_se, rhs_se, res_se, N)


def sample_integrals(u, N: int, rng: RngStream, threads: int | None = None,
                     scale: float = 1.0) -> np.ndarray:
    """``scale · δ(u)`` on ``N`` independent paths (sample order fixed)."""

    def chunk(a, b):
        path = sample_path(u.grid, u.dim, rng, n=b - a, start=a)
        return scale * np.asarray(skorohod_integral(u, path).value)

    return concat(map_chunks(chunk, N, threads))

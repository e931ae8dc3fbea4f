"""Cylindrical functionals ``F = f(W(h_1), ..., W(h_n))`` and their derivatives.

``DF = Σ ∂_i f · h_i`` and ``D²F = Σ ∂_ij f · h_i ⊗ h_j`` are computed from the
exact gradient and Hessian of the expression tree, so they carry no
discretisation error on the grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grid import BrownianPath, Kernel, TimeGrid, _check_same
from .smooth import Const, SmoothMap, Var, from_name


@dataclass(frozen=True, eq=False)
class H2Sample:
    """``D_s D_t F`` as cell-pair values of shape ``(..., n, d, n, d)``."""

    grid: TimeGrid
    values: np.ndarray

    @property
    def dim(self) -> int:
        return self.values.shape[-1]

    def norm(self) -> np.ndarray:
        """Hilbert–Schmidt norm in H ⊗ H."""
        dt = self.grid.dt
        w = np.einsum("i,j->ij", dt, dt)
        return np.sqrt(np.einsum("...ikjl,ij->...", self.values**2, w))


class CylindricalFunctional:
    """``f(W(h_1), ..., W(h_n))`` with all kernels on one grid."""

    def __init__(self, map: SmoothMap, kernels: Sequence[Kernel], grid: TimeGrid | None = None,
                 dim: int | None = None):
        kernels = list(kernels)
        if map.arity != len(kernels):
            raise ValueError(f"map arity {map.arity} but {len(kernels)} kernels")
        if kernels:
            grid = kernels[0].grid
            dim = kernels[0].dim
            for h in kernels[1:]:
                _check_same(grid, dim, h.grid, h.dim)
        elif grid is None or dim is None:
            raise ValueError("a constant functional needs an explicit grid and dim")
        self.map = map
        self.kernels = kernels
        self.grid = grid
        self.dim = dim
        if kernels:
            self._stack = np.stack([h.values for h in kernels])
        else:
            self._stack = np.zeros((0, grid.n_cells, dim))

    def __repr__(self):
        return f"CylindricalFunctional({self.map!r}, n={len(self.kernels)})"

    @property
    def arity(self) -> int:
        return self.map.arity

    def support_end(self) -> float:
        """Right end of the union of kernel supports (0 for constants)."""
        used = np.any(self._stack != 0.0, axis=(0, 2))
        if not used.any():
            return 0.0
        return float(self.grid.knots[np.nonzero(used)[0][-1] + 1])

    def inputs(self, path: BrownianPath) -> np.ndarray:
        _check_same(self.grid, self.dim, path.grid, path.dim)
        return np.einsum("...ik,nik->...n", path.increments, self._stack)

    # arithmetic builds new functionals over the concatenated kernel lists
    def _combine(self, other, op):
        if not isinstance(other, CylindricalFunctional):
            other = constant(float(other), self.grid, self.dim)
        _check_same(self.grid, self.dim, other.grid, other.dim)
        n = self.arity + other.arity
        a = self.map.shifted(0, n).expr
        b = other.map.shifted(self.arity, n).expr
        return CylindricalFunctional(SmoothMap(op(a, b), n), self.kernels + other.kernels,
                                     self.grid, self.dim)

    def __add__(self, other):
        return self._combine(other, lambda a, b: a + b)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, lambda a, b: a - b)

    def __mul__(self, other):
        return self._combine(other, lambda a, b: a * b)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0


def constant(c: float, grid: TimeGrid, dim: int = 1) -> CylindricalFunctional:
    return CylindricalFunctional(SmoothMap(Const(float(c)), 0), [], grid, dim)


def wiener(h: Kernel) -> CylindricalFunctional:
    """The functional ``W(h)``."""
    return CylindricalFunctional(SmoothMap(Var(0), 1), [h])


def apply(map: SmoothMap | str, *kernels: Kernel) -> CylindricalFunctional:
    if isinstance(map, str):
        map = from_name(map)
    return CylindricalFunctional(map, kernels)


def eval_functional(F: CylindricalFunctional, path: BrownianPath):
    out = F.map(F.inputs(path))
    return float(out) if np.ndim(out) == 0 else out


def derivative(F: CylindricalFunctional, path: BrownianPath) -> Kernel:
    """``DF`` on ``path`` as a (possibly batched) kernel."""
    x = F.inputs(path)
    batch = x.shape[:-1]
    if F.arity == 0:
        return Kernel(F.grid, np.zeros(batch + (F.grid.n_cells, F.dim)))
    g = F.map.grad(x)
    return Kernel(F.grid, np.einsum("...n,nik->...ik", g, F._stack))


def second_derivative(F: CylindricalFunctional, path: BrownianPath) -> H2Sample:
    x = F.inputs(path)
    batch = x.shape[:-1]
    n, d = F.grid.n_cells, F.dim
    if F.arity == 0:
        return H2Sample(F.grid, np.zeros(batch + (n, d, n, d)))
    hess = F.map.hessian(x)
    vals = np.einsum("...ab,aik,bjl->...ikjl", hess, F._stack, F._stack)
    # the reduction order of einsum is not symmetric; average with the transpose
    nb = vals.ndim - 4
    swap = tuple(range(nb)) + (nb + 2, nb + 3, nb, nb + 1)
    return H2Sample(F.grid, 0.5 * (vals + np.transpose(vals, swap)))


def value_and_grad(F: CylindricalFunctional, path: BrownianPath):
    """Value and gradient of the map at the path's inputs (one tree pass)."""
    v, g, _ = F.map.jet(F.inputs(path), 1)
    return v, g

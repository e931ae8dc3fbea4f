"""Time grids on [0, 1], Brownian increments and piecewise-constant kernels.

Everything living in H = L^2([0, 1], R^d) is represented by its cell values,
so inner products and Wiener integrals are finite sums with no quadrature
error. Arrays carry the cell axis and the dimension axis last; any leading
axes are sample (batch) axes and broadcast through every operation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import RngStream


@dataclass(frozen=True, eq=False)
class TimeGrid:
    knots: np.ndarray
    uniform: bool = True

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        if knots.ndim != 1 or knots.size < 2:
            raise ValueError("a grid needs at least two knots")
        if knots[0] != 0.0 or knots[-1] != 1.0:
            raise ValueError("grid must start at 0 and end at 1")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)

    @property
    def n_cells(self) -> int:
        return self.knots.size - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.knots)

    @property
    def left(self) -> np.ndarray:
        return self.knots[:-1]

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and np.array_equal(self.knots, other.knots)

    def __hash__(self):
        return hash(self.knots.tobytes())

    def __repr__(self):
        return f"TimeGrid(n_cells={self.n_cells}, uniform={self.uniform})"

    def overlap(self, a: float, b: float) -> np.ndarray:
        """Length of ``[a, b] ∩ cell_i`` for every cell."""
        lo = np.maximum(self.knots[:-1], a)
        hi = np.minimum(self.knots[1:], b)
        return np.clip(hi - lo, 0.0, None)

    def refine(self) -> "TimeGrid":
        mid = 0.5 * (self.knots[:-1] + self.knots[1:])
        knots = np.empty(2 * self.n_cells + 1)
        knots[0::2] = self.knots
        knots[1::2] = mid
        return TimeGrid(knots, self.uniform)


def make_grid(n_cells: int, kind: str = "uniform") -> TimeGrid:
    if kind != "uniform":
        raise ValueError(f"unsupported grid kind {kind!r}")
    if int(n_cells) < 1:
        raise ValueError("n_cells must be >= 1")
    n_cells = int(n_cells)
    return TimeGrid(np.arange(n_cells + 1) / n_cells, uniform=True)


def _check_same(grid_a: TimeGrid, dim_a: int, grid_b: TimeGrid, dim_b: int):
    if dim_a != dim_b:
        raise ValueError(f"dimension mismatch: {dim_a} vs {dim_b}")
    if grid_a is not grid_b and grid_a != grid_b:
        raise ValueError("grid mismatch")


@dataclass(frozen=True, eq=False)
class Kernel:
    """An element of H stored as cell values of shape ``(..., n_cells, dim)``."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim < 2 or values.shape[-2] != self.grid.n_cells:
            raise ValueError(
                f"kernel values need shape (..., {self.grid.n_cells}, dim), got {values.shape}"
            )
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.shape[-1]

    def _binary(self, other, op):
        if isinstance(other, Kernel):
            _check_same(self.grid, self.dim, other.grid, other.dim)
            return Kernel(self.grid, op(self.values, other.values))
        return NotImplemented

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, scalar):
        if isinstance(scalar, Kernel):
            return NotImplemented
        return Kernel(self.grid, np.multiply(scalar, self.values))

    __rmul__ = __mul__

    def __neg__(self):
        return Kernel(self.grid, -self.values)

    def integral(self) -> np.ndarray:
        """Componentwise ``∫_0^1 h(t) dt``, shape ``(..., dim)``."""
        return np.einsum("...ik,i->...k", self.values, self.grid.dt)


def zero_kernel(grid: TimeGrid, dim: int = 1) -> Kernel:
    return Kernel(grid, np.zeros((grid.n_cells, dim)))


def indicator(grid: TimeGrid, a: float = 0.0, b: float = 1.0, dim: int = 1,
              component: int = 0) -> Kernel:
    """``1_[a,b]`` in one coordinate, projected onto the grid (cell averages)."""
    values = np.zeros((grid.n_cells, dim))
    values[:, component] = grid.overlap(a, b) / grid.dt
    return Kernel(grid, values)


def kernel_inner(h: Kernel, g: Kernel) -> np.ndarray | float:
    _check_same(h.grid, h.dim, g.grid, g.dim)
    out = np.einsum("...ik,...ik,i->...", h.values, g.values, h.grid.dt)
    return float(out) if np.ndim(out) == 0 else out


def kernel_norm(h: Kernel) -> np.ndarray | float:
    return np.sqrt(kernel_inner(h, h))


@dataclass(frozen=True, eq=False)
class BrownianPath:
    """Brownian increments ``ΔW_i^k`` with shape ``(..., n_cells, dim)``."""

    grid: TimeGrid
    increments: np.ndarray
    sample_start: int = field(default=0, compare=False)

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        if inc.ndim < 2 or inc.shape[-2] != self.grid.n_cells:
            raise ValueError("increments need shape (..., n_cells, dim)")
        object.__setattr__(self, "increments", inc)

    @property
    def dim(self) -> int:
        return self.increments.shape[-1]

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.increments.shape[:-2]

    def knot_values(self) -> np.ndarray:
        """``W(t_i)`` at every knot, shape ``(..., n_cells + 1, dim)``; W(0) = 0."""
        w = np.cumsum(self.increments, axis=-2)
        zero = np.zeros(self.batch_shape + (1, self.dim))
        return np.concatenate([zero, w], axis=-2)

    def left_values(self) -> np.ndarray:
        """``W(t_i)`` at the left end of each cell."""
        return self.knot_values()[..., :-1, :]

    def terminal(self) -> np.ndarray:
        """``W(1)``, shape ``(..., dim)``."""
        return self.increments.sum(axis=-2)

    def coarsen(self, factor: int = 2) -> "BrownianPath":
        """The same path seen on a grid with ``factor`` times fewer cells."""
        n = self.grid.n_cells
        if n % factor:
            raise ValueError("cell count not divisible by factor")
        shape = self.batch_shape + (n // factor, factor, self.dim)
        inc = self.increments.reshape(shape).sum(axis=-2)
        grid = TimeGrid(self.grid.knots[::factor], self.grid.uniform)
        return BrownianPath(grid, inc, self.sample_start)

    def refine(self, rng: RngStream) -> "BrownianPath":
        """Insert Brownian-bridge midpoints; original cell sums are kept."""
        fine = self.grid.refine()
        batch = int(np.prod(self.batch_shape, dtype=int))
        width = self.grid.n_cells * self.dim
        z = rng.normals(self.sample_start, batch, width)
        z = z.reshape(self.batch_shape + (self.grid.n_cells, self.dim))
        half = 0.5 * self.increments
        left = half + z * np.sqrt(self.grid.dt / 4.0)[:, None]
        right = self.increments - left
        inc = np.empty(self.batch_shape + (2 * self.grid.n_cells, self.dim))
        inc[..., 0::2, :] = left
        inc[..., 1::2, :] = right
        return BrownianPath(fine, inc, self.sample_start)


def sample_path(grid: TimeGrid, dim: int, rng: RngStream, n: int | None = None,
                start: int = 0) -> BrownianPath:
    """Draw Brownian increments on ``grid``.

    With ``n=None`` a single path (sample index ``start``) is returned;
    otherwise a batch of ``n`` paths, samples ``start .. start+n-1``.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    count = 1 if n is None else int(n)
    z = rng.normals(start, count, grid.n_cells * dim)
    inc = z.reshape(count, grid.n_cells, dim) * np.sqrt(grid.dt)[:, None]
    if n is None:
        inc = inc[0]
    return BrownianPath(grid, inc, start)


def path_from_increments(grid: TimeGrid, increments) -> BrownianPath:
    inc = np.asarray(increments, dtype=float)
    if inc.ndim == 1:
        inc = inc[:, None]
    return BrownianPath(grid, inc)


def wiener_integral(path: BrownianPath, h: Kernel) -> np.ndarray | float:
    """``W(h) = Σ h_i^k ΔW_i^k``; broadcasts over batch axes of both."""
    _check_same(path.grid, path.dim, h.grid, h.dim)
    out = np.einsum("...ik,...ik->...", h.values, path.increments)
    return float(out) if np.ndim(out) == 0 else out

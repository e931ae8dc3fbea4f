"""Canonical functionals, kernels and integrands used by the experiments.

Kept in one place so the CLI, the tests and the demo scripts exercise the
same objects. Every builder takes the grid resolution; indicator kernels are
projected onto the grid as cell averages, so resolutions that are multiples
of 4 represent them exactly.
"""

from __future__ import annotations

import math

import numpy as np

from .grid import Kernel, indicator, make_grid
from .malliavin import CylindricalFunctional, apply, constant, wiener
from .skorohod import StepIntegrand
from .smooth import SmoothMap, Var, cos, exp, tanh
from .tightness import bounded_adapted_integrand, thm1_integrand


def gaussian_kernels(n_cells: int = 4) -> dict[str, Kernel]:
    """Three deterministic kernels of different shape and dimension."""
    grid = make_grid(n_cells)
    t = grid.left + 0.5 * grid.dt
    return {
        "unit": indicator(grid),
        "signed_steps": indicator(grid, 0.0, 0.5) - 2.0 * indicator(grid, 0.5, 0.75),
        "sine_2d": Kernel(grid, np.column_stack([np.sin(2 * math.pi * t), 0.5 + 0.0 * t])),
    }


def duality_pairs(n_cells: int = 4) -> dict[str, tuple[CylindricalFunctional, StepIntegrand]]:
    """Five ``(F, u)`` pairs, three of them with anticipating integrands."""
    grid = make_grid(n_cells)
    one = indicator(grid)
    first_half = indicator(grid, 0.0, 0.5)
    w1 = wiener(one)
    return {
        "wiener_vs_deterministic": (wiener(one), StepIntegrand.deterministic(one)),
        "constant_vs_thm1": (constant(2.0, grid), thm1_integrand(grid)),
        "thm1_pair": (w1 * w1, thm1_integrand(grid)),
        "sin_vs_terminal": (apply("sin", first_half), StepIntegrand.product(w1, one)),
        "exp_vs_future_tanh": (
            apply(SmoothMap(exp(0.5 * Var(0)), 1), indicator(grid, 0.25, 1.0)),
            StepIntegrand.product(apply("tanh", indicator(grid, 0.5, 1.0)), first_half),
        ),
    }


def adapted_suite(n_cells: int = 8) -> dict[str, StepIntegrand]:
    """Three adapted step integrands (coefficients use only the past)."""
    grid = make_grid(n_cells)
    knots = grid.knots
    running = StepIntegrand.from_cells(
        [[wiener(indicator(grid, 0.0, knots[i]))] for i in range(n_cells)])
    cross = []
    for i in range(n_cells):
        past0 = indicator(grid, 0.0, knots[i], 2, 0)
        past1 = indicator(grid, 0.0, knots[i], 2, 1)
        prod = CylindricalFunctional(SmoothMap(cos(Var(0)) * Var(1), 2), [past0, past1])
        cross.append([prod, CylindricalFunctional(SmoothMap(tanh(Var(0)), 1), [past0])])
    return {
        "running_wiener": running,
        "bounded_tanh": bounded_adapted_integrand(grid, 1.0, 1),
        "cross_2d": StepIntegrand.from_cells(cross),
    }


def meyer_suite(n_cells: int = 4) -> dict[str, StepIntegrand]:
    """Deterministic, anticipating Gaussian-coefficient and bounded adapted integrands."""
    grid = make_grid(n_cells)
    one = indicator(grid)
    return {
        "deterministic": StepIntegrand.deterministic(one),
        "terminal_wiener": StepIntegrand.product(wiener(one), one),
        "bounded_tanh": bounded_adapted_integrand(grid, 1.0, 1),
    }


def scaled_wiener_family(n_cells: int = 1):
    """``eps -> ε W(1) 1_[0,1]``, whose norms scale exactly like ``ε``."""
    grid = make_grid(n_cells)
    one = indicator(grid)
    base = StepIntegrand.product(wiener(one), one)
    return lambda eps: base * eps

"""Skorohod integrals on discretised Wiener space and exponential-tightness diagnostics."""

__version__ = "0.1.0"

from .grid import (  # noqa: E402
    BrownianPath,
    Kernel,
    TimeGrid,
    indicator,
    kernel_inner,
    kernel_norm,
    make_grid,
    sample_path,
    wiener_integral,
)
from .malliavin import CylindricalFunctional, apply, constant, derivative, eval_functional, wiener  # noqa: E402
from .rng import RngStream  # noqa: E402
from .skorohod import StepIntegrand, duality_residual, ito_integral, skorohod_integral  # noqa: E402
from .smooth import SmoothMap, from_name  # noqa: E402

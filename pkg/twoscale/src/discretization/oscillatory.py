"""Quadrature of x -> g(x, x/eps) over a macro grid.

Every macro element is split until each eps-period holds at least
``SUBCELLS_PER_PERIOD`` subcells per axis; the same integral on twice as many
subcells provides the reported error estimate.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from twoscale.src.config import GAUSS_ORDER, MAX_SUBDIVISIONS, SUBCELLS_PER_PERIOD
from twoscale.src.discretization.assembly import ElementQuadrature
from twoscale.src.discretization.grids import QuadratureRule
from twoscale.src.errors import UnresolvedOscillationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OscillatoryIntegral:
    value: float
    error: float
    subdivisions: int


def required_subdivisions(h: float, eps: float, per_period: int = SUBCELLS_PER_PERIOD) -> int:
    return max(1, math.ceil(per_period * h / eps - 1e-9))


def _integrate(integrand, eps, grid, order, subcells):
    eq = ElementQuadrature(grid, QuadratureRule.tensor(grid.d, order, subcells))
    x = eq.flat_points
    vals = np.asarray(integrand(x, x / eps), dtype=float).reshape(eq.JxW.shape)
    return eq.integrate(vals)


def integrate_oscillatory(integrand: Callable[[np.ndarray, np.ndarray], np.ndarray], eps: float, grid,
                          order: int = GAUSS_ORDER, per_period: int = SUBCELLS_PER_PERIOD,
                          max_subdivisions: int = MAX_SUBDIVISIONS) -> OscillatoryIntegral:
    """int_Omega integrand(x, x/eps) dx.

    ``integrand`` receives points x of shape (N, d) and y = x/eps of the same
    shape (unwrapped; periodic fields wrap themselves) and returns N values.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    s = required_subdivisions(grid.h, eps, per_period)
    if 2 * s > max_subdivisions:
        raise UnresolvedOscillationError(
            f"eps={eps:g} needs {2 * s} subdivisions per element of size {grid.h:g} "
            f"(limit {max_subdivisions})")
    coarse = _integrate(integrand, eps, grid, order, s)
    fine = _integrate(integrand, eps, grid, order, 2 * s)
    logger.debug("[QUAD] eps=%g subdivisions=%d value=%.6e", eps, s, coarse)
    return OscillatoryIntegral(value=coarse, error=abs(coarse - fine), subdivisions=s)

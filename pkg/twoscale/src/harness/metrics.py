import numpy as np
from dataclasses import dataclass
from typing import List, Sequence

from twoscale.src.config import DECREASE_FACTOR, GAP_FLOOR, GAUSS_ORDER, GROWTH_FACTOR
from twoscale.src.discretization.assembly import ElementQuadrature
from twoscale.src.solvers.flux import F_prime


def decreasing(values: Sequence[float], alpha: float = DECREASE_FACTOR, floor: float = GAP_FLOOR) -> bool:
    """last <= alpha * first over the finite entries; values already below ``floor`` count as decreased."""
    vals = np.asarray(values, dtype=float)
    vals = vals[np.isfinite(vals)]
    if len(vals) < 2:
        return False
    return bool(vals[-1] <= alpha * vals[0] or vals[-1] <= floor)


def strictly_decreasing(values: Sequence[float]) -> bool:
    vals = np.asarray(values, dtype=float)
    return bool(len(vals) >= 2 and np.all(np.isfinite(vals)) and np.all(np.diff(vals) < 0))


def growth_flags(values: Sequence[float], factor: float = GROWTH_FACTOR) -> List[bool]:
    """Entry k is flagged when it exceeds factor times entry k - 1."""
    vals = np.asarray(values, dtype=float)
    flags = [False] * len(vals)
    for k in range(1, len(vals)):
        flags[k] = bool(vals[k] > factor * vals[k - 1])
    return flags


def bounded_growth(values: Sequence[float], factor: float = GROWTH_FACTOR) -> bool:
    """max over the list <= factor * max of the first two entries."""
    vals = np.asarray(values, dtype=float)
    if len(vals) < 2 or not np.all(np.isfinite(vals)):
        return False
    return bool(np.max(vals) <= factor * np.max(vals[:2]))


@dataclass(frozen=True)
class ContinuityCheck:
    kind: str        # 'constant', 'holder' or 'lipschitz'
    exponent: float  # Lebesgue exponent of the F' difference
    lhs: float
    rhs: float

    @property
    def ratio(self) -> float:
        if self.rhs == 0:
            return 0.0 if self.lhs == 0 else float('inf')
        return self.lhs / self.rhs

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs * (1.0 + 1e-10) + 1e-14


def check_f_prime_continuity(u, u_eps, p: float, order: int = GAUSS_ORDER) -> ContinuityCheck:
    """Compare ||F'(u) - F'(u_eps)|| with the Hoelder (2 < p < 3) or Lipschitz (p >= 3) bound.

    Both functions are evaluated at the quadrature points of the grid with
    more elements.
    """
    fine, coarse = (u, u_eps) if u.grid.n_elements >= u_eps.grid.n_elements else (u_eps, u)
    eq = ElementQuadrature(fine.grid, order=order)
    a = eq.evaluate(fine.values)
    b = coarse.evaluate(eq.flat_points).reshape(eq.JxW.shape)
    dist = eq.integrate(np.abs(a - b) ** p) ** (1.0 / p)
    diff = np.abs(F_prime(a, p) - F_prime(b, p))
    if p == 2:
        return ContinuityCheck('constant', np.inf, float(np.max(diff)), 0.0)
    if p < 3:
        q = p / (p - 2.0)
        lhs = eq.integrate(diff ** q) ** (1.0 / q)
        return ContinuityCheck('holder', q, lhs, (p - 1.0) * dist ** (p - 2.0))
    lhs = eq.integrate(diff ** p) ** (1.0 / p)
    sup = float(np.max(np.abs(u.values)) + np.max(np.abs(u_eps.values)))
    C = (p - 1.0) * (p - 2.0) * sup ** (p - 3.0)
    return ContinuityCheck('lipschitz', p, lhs, C * dist)

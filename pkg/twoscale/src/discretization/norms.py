import numpy as np

from twoscale.src.config import GAUSS_ORDER
from twoscale.src.discretization.assembly import ElementQuadrature


def _quadrature(g, order):
    return ElementQuadrature(g.grid, order=order)


def _check_p(p):
    if not p >= 1:
        raise ValueError(f"Norm exponent must satisfy p >= 1, got {p}")


def lp_norm(g, p: float, order: int = GAUSS_ORDER) -> float:
    """(int |g|^p)^(1/p) by elementwise Gauss quadrature; p = inf gives the nodal max."""
    _check_p(p)
    if np.isinf(p):
        return float(np.max(np.abs(g.values)))
    eq = _quadrature(g, order)
    return eq.integrate(np.abs(eq.evaluate(g.values)) ** p) ** (1.0 / p)


def w1p_seminorm(g, p: float, order: int = GAUSS_ORDER) -> float:
    """(int |Dg|^p)^(1/p) with the Euclidean norm of the gradient."""
    _check_p(p)
    eq = _quadrature(g, order)
    grad = np.linalg.norm(eq.gradient(g.values), axis=-1)
    if np.isinf(p):
        return float(np.max(grad))
    return eq.integrate(grad ** p) ** (1.0 / p)


def w1p_norm(g, p: float, order: int = GAUSS_ORDER) -> float:
    """(||g||_p^p + ||Dg||_p^p)^(1/p)."""
    return (lp_norm(g, p, order) ** p + w1p_seminorm(g, p, order) ** p) ** (1.0 / p)


def lp_distance(g, h, p: float, order: int = GAUSS_ORDER) -> float:
    """||g - h||_p for functions on possibly different grids of the same domain.

    Both are evaluated at the quadrature points of the grid with more elements,
    whose own function is evaluated elementwise so its kinks are respected.
    """
    _check_p(p)
    if h.grid.n_elements > g.grid.n_elements:
        g, h = h, g
    eq = _quadrature(g, order)
    diff = eq.evaluate(g.values) - h.evaluate(eq.flat_points).reshape(eq.JxW.shape)
    if np.isinf(p):
        return float(np.max(np.abs(diff)))
    return eq.integrate(np.abs(diff) ** p) ** (1.0 / p)

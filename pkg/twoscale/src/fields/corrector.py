"""Corrector potential: periodic zero-mean Phi with Laplacian V, and G = D Phi."""
import logging
from dataclasses import dataclass

import numpy as np

from twoscale.src.config import GAUSS_ORDER, MEAN_TOL, RESIDUAL_TOL, SUBCELLS
from twoscale.src.discretization.assembly import ElementQuadrature, solve_zero_mean
from twoscale.src.discretization.functions import CellFunction
from twoscale.src.discretization.grids import CellGrid
from twoscale.src.errors import HypothesisError, SolverError
from twoscale.src.fields.periodic import PotentialField

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CorrectorPotential:
    phi: CellFunction
    residual: float

    @property
    def grid(self) -> CellGrid:
        return self.phi.grid

    def G(self, y) -> np.ndarray:
        """Exact discrete gradient of Phi at y (wrapped), shape (N, d)."""
        pts = np.asarray(y, dtype=float).reshape(-1, self.grid.d)
        return self.phi.gradient(pts)

    def at_quadrature(self, eq: ElementQuadrature, scale: float = 1.0) -> np.ndarray:
        """G(x/scale) at the points of ``eq`` as (E, Q, d)."""
        return self.G(eq.flat_points / scale).reshape(eq.JxW.shape + (self.grid.d,))


def solve_corrector_potential(V: PotentialField, cell_grid: CellGrid, mean_tol: float = MEAN_TOL,
                              tol: float = RESIDUAL_TOL) -> CorrectorPotential:
    """Solve -int D Phi . D psi = int V psi for periodic psi with int Phi = 0."""
    if V.d != cell_grid.d:
        raise ValueError(f"Dimension mismatch: V has d={V.d}, grid has d={cell_grid.d}")
    if abs(V.mean_residual) > mean_tol:
        raise HypothesisError(f"V must have zero mean over Y, residual {V.mean_residual:.6g}")

    eq = ElementQuadrature(cell_grid, order=GAUSS_ORDER, subcells=SUBCELLS)
    K = eq.assemble_matrix(gg=np.ones(eq.JxW.shape))
    M = eq.mass_vector()
    b = eq.assemble_vector(val=V.at_quadrature(eq))
    (phi,), (lam,) = solve_zero_mean(K, M, [-b])

    residual = float(np.linalg.norm(K @ phi + b + lam * M))
    if residual > tol:
        raise SolverError(f"Corrector potential residual {residual:.3e} exceeds {tol:.1e}")
    logger.info("[CORRECTOR] V=%s m=%d residual=%.2e", V.label, cell_grid.m, residual)
    return CorrectorPotential(phi=CellFunction(cell_grid, phi), residual=residual)

"""Effective coefficients and the homogenized linear macro problem.

With the split corrector u1 = Du . chi + u zeta the p = 2 limit reads

    -div(a_bar Du + c_bar u) + b_bar . Du + s_bar u = f,   u = 0 on the boundary,

where a_bar = int a (I + D chi), b_bar = int V chi, s_bar = int V zeta and
c_bar = int a D zeta. The ``reduced`` ansatz keeps only a_bar and b_bar.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from twoscale.src.config import FD_STEP, MACRO_GAUSS_ORDER
from twoscale.src.discretization.assembly import ElementQuadrature
from twoscale.src.discretization.functions import MacroFunction
from twoscale.src.discretization.grids import MacroGrid
from twoscale.src.errors import HypothesisError, SolverError
from twoscale.src.models.cell_problems import CellAssembly, CellFluxEvaluator, LinearCorrectors, NonlinearCellSolution
from twoscale.src.solvers.newton import SolverConfig, linear_solve

logger = logging.getLogger(__name__)

ANSATZES = ('split', 'reduced')


@dataclass(frozen=True, eq=False)
class LinearEffectiveModel:
    a_bar: np.ndarray
    b_bar: np.ndarray
    s_bar: float
    c_bar: np.ndarray
    ansatz: str = 'split'

    def __post_init__(self):
        if self.ansatz not in ANSATZES:
            raise ValueError(f"ansatz must be one of {ANSATZES}, got {self.ansatz!r}")

    @property
    def d(self) -> int:
        return self.a_bar.shape[0]

    def min_eigenvalue(self) -> float:
        sym = 0.5 * (self.a_bar + self.a_bar.T)
        return float(np.linalg.eigvalsh(sym)[0])

    def with_ansatz(self, ansatz: str) -> "LinearEffectiveModel":
        return LinearEffectiveModel(self.a_bar, self.b_bar, self.s_bar, self.c_bar, ansatz)

    def to_dict(self) -> dict:
        return {
            'ansatz': self.ansatz,
            'a_bar': self.a_bar.tolist(),
            'b_bar': self.b_bar.tolist(),
            's_bar': float(self.s_bar),
            'c_bar': self.c_bar.tolist(),
            'min_eigenvalue': self.min_eigenvalue(),
        }


def build_linear_effective(correctors: LinearCorrectors, a, V, ansatz: str = 'split') -> LinearEffectiveModel:
    asm = CellAssembly(a, V, correctors.grid)
    eq, d = asm.eq, correctors.grid.d
    A = asm.a_q
    a_bar = np.zeros((d, d))
    for j, chi in enumerate(correctors.chi):
        g = eq.gradient(chi.values)
        g[..., j] += 1.0
        flux = A[..., None] * g if A.ndim == 2 else np.einsum('eqij,eqj->eqi', A, g)
        a_bar[:, j] = np.einsum('eq,eqd->d', eq.JxW, flux)
    b_bar = np.array([asm.b_V @ chi.values for chi in correctors.chi])
    s_bar = float(asm.b_V @ correctors.zeta.values)
    gz = eq.gradient(correctors.zeta.values)
    flux_z = A[..., None] * gz if A.ndim == 2 else np.einsum('eqij,eqj->eqi', A, gz)
    c_bar = np.einsum('eq,eqd->d', eq.JxW, flux_z)
    model = LinearEffectiveModel(a_bar=a_bar, b_bar=b_bar, s_bar=s_bar, c_bar=c_bar, ansatz=ansatz)
    logger.info("[EFFECTIVE] a_bar=%s b_bar=%s s_bar=%.6e c_bar=%s", a_bar.tolist(), b_bar.tolist(), s_bar,
                c_bar.tolist())
    return model


def macro_quadrature(grid: MacroGrid) -> ElementQuadrature:
    return ElementQuadrature(grid, order=MACRO_GAUSS_ORDER)


def source_vector(eq: ElementQuadrature, f) -> np.ndarray:
    vals = np.asarray(f(eq.flat_points), dtype=float)
    return eq.assemble_vector(val=np.broadcast_to(vals.reshape(-1), (eq.JxW.size,)).reshape(eq.JxW.shape))


def solve_macro_linear(model: LinearEffectiveModel, f, grid: MacroGrid, ansatz: Optional[str] = None,
                       config: Optional[SolverConfig] = None) -> MacroFunction:
    """Homogenized p = 2 problem with zero Dirichlet data."""
    if ansatz is not None and ansatz != model.ansatz:
        model = model.with_ansatz(ansatz)
    if model.d != grid.d:
        raise ValueError("Effective model and macro grid have different dimensions")
    lam = model.min_eigenvalue()
    if not lam > 0:
        raise HypothesisError(f"Effective diffusion is not positive definite (min eigenvalue {lam:.3e})")
    cfg = config or SolverConfig()

    eq = macro_quadrature(grid)
    shape = eq.JxW.shape
    gg = np.broadcast_to(model.a_bar, shape + (grid.d, grid.d))
    vg = np.broadcast_to(model.b_bar, shape + (grid.d,))
    if model.ansatz == 'split':
        K = eq.assemble_matrix(gg=gg, vg=vg, gv=np.broadcast_to(model.c_bar, shape + (grid.d,)),
                               vv=np.full(shape, model.s_bar))
    else:
        K = eq.assemble_matrix(gg=gg, vg=vg)
    idx = grid.interior
    K = K[idx][:, idx]
    load = source_vector(eq, f)[idx]
    U = linear_solve(K, load, cfg.linear_tol)
    residual = float(np.linalg.norm(K @ U - load))
    if residual > cfg.residual_tol * max(1.0, float(np.linalg.norm(load))):
        raise SolverError(f"[MACRO] linear residual {residual:.3e} exceeds tolerance")
    logger.info("[MACRO] linear %s ansatz n=%d ||R||=%.2e", model.ansatz, grid.n, residual)
    return MacroFunction.from_interior(grid, U)


class NonlinearEffectiveEvaluator:
    """(theta, xi) -> (q, v) backed by cell solves.

    ``derivatives`` differentiates exact (uncached) evaluations by central
    differences; the cell solution at the centre warm-starts the shifted solves.
    """

    def __init__(self, cells: CellFluxEvaluator, fd_step: float = FD_STEP):
        self.cells = cells
        self.fd_step = fd_step
        asm = cells.assembly
        self.a_harmonic = 1.0 / asm.eq.integrate(1.0 / asm.a_q)

    @property
    def p(self) -> float:
        return self.cells.p

    @property
    def d(self) -> int:
        return self.cells.d

    @property
    def assembly(self) -> CellAssembly:
        return self.cells.assembly

    def __call__(self, theta: float, xi) -> Tuple[np.ndarray, float]:
        sol = self.cells.evaluate(theta, xi)
        return np.asarray(sol.q), sol.v

    def evaluate(self, theta: float, xi, exact: bool = False, init=None) -> NonlinearCellSolution:
        return self.cells.evaluate(theta, xi, exact=exact, init=init)

    def evaluate_many(self, states, exact: bool = False, inits=None):
        return self.cells.evaluate_many(states, exact=exact, inits=inits)

    def derivatives(self, theta: float, xi, init=None):
        """(dq/dxi (d, d), dq/dtheta (d,), dv/dxi (d,), dv/dtheta)."""
        h, d = self.fd_step, self.d
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        state = np.concatenate([[theta], xi])
        jac = np.zeros((d + 1, d + 1))
        for j in range(d + 1):
            cols = []
            for sign in (1.0, -1.0):
                s = state.copy()
                s[j] += sign * h
                sol = self.cells.evaluate(s[0], s[1:], exact=True, init=init)
                cols.append(np.concatenate([np.asarray(sol.q), [sol.v]]))
            jac[:, j] = (cols[0] - cols[1]) / (2.0 * h)
        return jac[:d, 1:], jac[:d, 0], jac[d, 1:], float(jac[d, 0])

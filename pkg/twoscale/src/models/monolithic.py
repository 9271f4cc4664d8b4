"""Fully coupled discrete two-scale system for d = 1.

Unknowns are the interior macro values and, at each macro quadrature point
x_k, a cell corrector chi_k with its mean multiplier lambda_k. The macro rows
are those of the HMM residual, the cell rows are the cell problem at
(u_h(x_k), u_h'(x_k)). One Newton iteration on this system with the same
delta continuation as the cell solver gives an independent check of the
nested macro/cell iteration.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp

from twoscale.src.discretization.functions import CellFunction, MacroFunction
from twoscale.src.discretization.grids import CellGrid, MacroGrid
from twoscale.src.errors import HypothesisError, SolverError
from twoscale.src.fields.periodic import PeriodicField, PotentialField
from twoscale.src.models.cell_problems import CellAssembly
from twoscale.src.models.effective import macro_quadrature, source_vector
from twoscale.src.solvers.flux import F, F_prime, F_second, RegularizedFlux
from twoscale.src.solvers.newton import SolveStats, SolverConfig, continuation_solve, linear_solve

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class MonolithicSolution:
    u: MacroFunction
    chi: Tuple[CellFunction, ...]
    q: np.ndarray
    v: np.ndarray
    stats: SolveStats


def _basis_at_points(eq, idx):
    """Sparse (K, n_interior) values and derivatives of the macro hat functions at the quadrature points."""
    E, L = eq.conn.shape
    Q = eq.N.shape[0]
    rows = np.repeat(np.arange(E * Q), L)
    cols = np.broadcast_to(eq.conn[:, None, :], (E, Q, L)).ravel()
    vals = np.broadcast_to(eq.N[None, :, :], (E, Q, L)).ravel()
    dvals = np.broadcast_to(eq.dN[None, :, :, 0], (E, Q, L)).ravel()
    shape = (E * Q, eq.n_dofs)
    P = sp.csr_matrix((vals, (rows, cols)), shape=shape)[:, idx]
    DP = sp.csr_matrix((dvals, (rows, cols)), shape=shape)[:, idx]
    return P.tocsr(), DP.tocsr()


class _CoupledSystem:
    def __init__(self, asm: CellAssembly, p: float, f, grid: MacroGrid):
        self.asm, self.p, self.grid = asm, p, grid
        meq = macro_quadrature(grid)
        self.idx = grid.interior
        self.nU = len(self.idx)
        self.P, self.DP = _basis_at_points(meq, self.idx)
        self.Pd, self.DPd = self.P.toarray(), self.DP.toarray()
        self.w = meq.JxW.ravel()
        self.K = len(self.w)
        self.m = asm.grid.n_dofs
        self.load = source_vector(meq, f)[self.idx]
        ceq = asm.eq
        self.conn = ceq.conn                                   # (Ec, 2)
        self.dN = ceq.dN[..., 0]                               # (Qc, 2)
        self.JxW = ceq.JxW                                     # (Ec, Qc)

    @property
    def size(self) -> int:
        return self.nU + self.K * (self.m + 1)

    def split(self, z):
        U = z[:self.nU]
        cells = z[self.nU:].reshape(self.K, self.m + 1)
        return U, cells[:, :self.m], cells[:, self.m]

    def _scatter(self, local):
        """(K, Ec, 2) element vectors -> (K, m)."""
        flat = (np.arange(self.K)[:, None, None] * self.m + self.conn[None, :, :]).ravel()
        return np.bincount(flat, weights=local.ravel(), minlength=self.K * self.m).reshape(self.K, self.m)

    def cell_fields(self, U, X, delta):
        theta, xi = self.Pd @ U, self.DPd @ U
        eta = xi[:, None, None] + np.einsum('kei,qi->keq', X[:, self.conn], self.dN)
        flux = RegularizedFlux(self.p, delta)
        A = flux.flux(self.asm.a_q, eta[..., None])[..., 0]
        T = flux.tangent(self.asm.a_q, eta[..., None])[..., 0, 0]
        return theta, xi, A, T

    def build(self, delta):
        asm, p = self.asm, self.p

        def residual(z):
            U, X, lam = self.split(z)
            theta, _, A, _ = self.cell_fields(U, X, delta)
            q = np.einsum('eq,keq->k', self.JxW, A)
            v = X @ asm.b_V
            R_U = self.DPd.T @ (self.w * q) + self.Pd.T @ (self.w * v * F_prime(theta, p)) - self.load
            R_cell = self._scatter(np.einsum('eq,keq,qi->kei', self.JxW, A, self.dN))
            R_cell += F(theta, p)[:, None] * asm.b_V[None, :] + lam[:, None] * asm.M[None, :]
            mean = X @ asm.M
            return np.concatenate([R_U, np.concatenate([R_cell, mean[:, None]], axis=1).ravel()])

        def jacobian(z):
            U, X, _ = self.split(z)
            theta, _, _, T = self.cell_fields(U, X, delta)
            v = X @ asm.b_V
            Tbar = np.einsum('eq,keq->k', self.JxW, T)
            B = self._scatter(np.einsum('eq,keq,qi->kei', self.JxW, T, self.dN))   # (K, m)
            Fp = F_prime(theta, p)
            J_UU = (self.DP.T @ sp.diags(self.w * Tbar) @ self.DP
                    + self.P.T @ sp.diags(self.w * v * F_second(theta, p, delta)) @ self.P)

            blocks = [[None] * (self.K + 1) for _ in range(self.K + 1)]
            blocks[0][0] = J_UU
            bV, M = asm.b_V, asm.M
            local = np.einsum('eq,keq,qi,qj->keij', self.JxW, T, self.dN, self.dN)
            for k in range(self.K):
                J_Uc = self.w[k] * (np.outer(self.DPd[k], B[k]) + Fp[k] * np.outer(self.Pd[k], bV))
                J_cU = np.outer(B[k], self.DPd[k]) + Fp[k] * np.outer(bV, self.Pd[k])
                rows = np.broadcast_to(self.conn[:, :, None], local[k].shape).ravel()
                cols = np.broadcast_to(self.conn[:, None, :], local[k].shape).ravel()
                Kk = sp.coo_matrix((local[k].ravel(), (rows, cols)), shape=(self.m, self.m)).tocsr()
                col = sp.csr_matrix(M.reshape(-1, 1))
                blocks[0][k + 1] = sp.csr_matrix(np.hstack([J_Uc, np.zeros((self.nU, 1))]))
                blocks[k + 1][0] = sp.csr_matrix(np.vstack([J_cU, np.zeros((1, self.nU))]))
                blocks[k + 1][k + 1] = sp.bmat([[Kk, col], [col.T, None]])
            return sp.bmat(blocks, format='csc')

        return residual, jacobian, None


def monolithic_solve(a: PeriodicField, V: PotentialField, p: float, f, macro_grid: MacroGrid, cell_grid: CellGrid,
                     config: Optional[SolverConfig] = None,
                     init: Optional[MacroFunction] = None) -> MonolithicSolution:
    """Coupled Newton solve of the discrete two-scale system (d = 1 only)."""
    if macro_grid.d != 1 or cell_grid.d != 1:
        raise ValueError("monolithic_solve supports d = 1 only")
    cfg = config or SolverConfig()
    asm = CellAssembly(a, V, cell_grid)
    if abs(asm.discrete_mean_V) > 1e-12:
        raise HypothesisError(f"V has discrete mean {asm.discrete_mean_V:.3e} on the cell grid")
    system = _CoupledSystem(asm, p, f, macro_grid)

    z0 = np.zeros(system.size)
    if init is not None:
        z0[:system.nU] = np.asarray(init.values)[system.idx]
    else:
        meq = macro_quadrature(macro_grid)
        a_harm = 1.0 / asm.eq.integrate(1.0 / asm.a_q)
        K0 = meq.assemble_matrix(gg=np.full(meq.JxW.shape, a_harm))[system.idx][:, system.idx]
        z0[:system.nU] = linear_solve(K0, system.load)
    schedule = (cfg.target_delta,) if p == 2 else cfg.delta_schedule
    z, stats = continuation_solve(system.build, z0, cfg, schedule, tag="MONOLITHIC")
    U, X, _ = system.split(z)
    if not stats.converged:
        raise SolverError(f"[MONOLITHIC] did not converge, ||R||={stats.residual:.3e}", stats=stats,
                          best=MacroFunction.from_interior(macro_grid, U))
    X = X - X.mean(axis=1, keepdims=True)
    _, _, A, _ = system.cell_fields(U, X, 0.0)
    q = np.einsum('eq,keq->k', system.JxW, A)
    v = X @ asm.b_V
    logger.info("[MONOLITHIC] n=%d m=%d unknowns=%d iterations=%d ||R||=%.2e", macro_grid.n, cell_grid.m,
                system.size, stats.iterations, stats.residual)
    return MonolithicSolution(u=MacroFunction.from_interior(macro_grid, U),
                              chi=tuple(CellFunction(cell_grid, x) for x in X), q=q, v=v, stats=stats)

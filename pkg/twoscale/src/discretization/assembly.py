"""Vectorized P1/Q1 assembly on uniform tensor grids.

Element arrays are built with einsum and scattered in one pass: vectors with
``np.bincount``, matrices through a COO triplet list converted to CSR. Summation
order depends only on the grid, so results do not depend on worker count.
"""
import logging
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from twoscale.src.discretization.grids import QuadratureRule, _local_offsets
from twoscale.src.errors import SingularJacobianError

logger = logging.getLogger(__name__)


def shape_functions(local: np.ndarray, d: int):
    """Q1 shape values (N, K) and reference gradients (N, K, d) at local points."""
    local = np.atleast_2d(local)
    off = _local_offsets(d)                                   # (K, d)
    factors = np.where(off[None, :, :] == 1, local[:, None, :], 1.0 - local[:, None, :])
    values = np.prod(factors, axis=2)
    sign = np.where(off == 1, 1.0, -1.0)                      # (K, d)
    grads = np.empty(values.shape + (d,))
    for a in range(d):
        rest = np.ones_like(values)
        for b in range(d):
            if b != a:
                rest = rest * factors[:, :, b]
        grads[:, :, a] = sign[None, :, a] * rest
    return values, grads


class ElementQuadrature:
    """Quadrature points, weights and shape data for every element of a grid."""

    def __init__(self, grid, rule: Optional[QuadratureRule] = None, order: int = 3, subcells: int = 1):
        self.grid = grid
        self.rule = rule if rule is not None else QuadratureRule.tensor(grid.d, order, subcells)
        d = grid.d
        self.d = d
        self.conn = grid.connectivity                          # (E, K)
        self.N, dref = shape_functions(self.rule.points, d)    # (Q, K), (Q, K, d)
        self.dN = dref / grid.h
        self.points = grid.element_origin[:, None, :] + grid.h * self.rule.points[None, :, :]
        self.JxW = np.broadcast_to(grid.h ** d * self.rule.weights, (grid.n_elements, self.rule.n_points))

    @property
    def n_dofs(self) -> int:
        return self.grid.n_dofs

    @property
    def flat_points(self) -> np.ndarray:
        return self.points.reshape(-1, self.d)

    # --- evaluation ---
    def evaluate(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values)[self.conn] @ self.N.T

    def gradient(self, values: np.ndarray) -> np.ndarray:
        return np.einsum('ek,qkd->eqd', np.asarray(values)[self.conn], self.dN)

    def integrate(self, q_values: np.ndarray) -> float:
        return float(np.sum(self.JxW * q_values))

    # --- assembly ---
    def assemble_vector(self, val: Optional[np.ndarray] = None, grad: Optional[np.ndarray] = None) -> np.ndarray:
        """sum_q w (val * phi_i + grad . D phi_i) scattered to dofs."""
        local = np.zeros(self.conn.shape)
        if val is not None:
            local += np.einsum('eq,qk->ek', self.JxW * val, self.N)
        if grad is not None:
            local += np.einsum('eq,eqd,qkd->ek', self.JxW, grad, self.dN)
        return np.bincount(self.conn.ravel(), weights=local.ravel(), minlength=self.n_dofs)

    def assemble_matrix(self, gg=None, vv=None, gv=None, vg=None) -> sp.csr_matrix:
        """Bilinear forms with trial phi_j and test phi_i.

        gg: (E,Q) scalar or (E,Q,d,d) tensor  ->  int D phi_i . gg D phi_j
        vv: (E,Q)                             ->  int vv phi_i phi_j
        gv: (E,Q,d)                           ->  int (gv . D phi_i) phi_j
        vg: (E,Q,d)                           ->  int phi_i (vg . D phi_j)
        """
        E, K = self.conn.shape
        local = np.zeros((E, K, K))
        w = self.JxW
        if gg is not None:
            gg = np.asarray(gg)
            if gg.ndim == 2:
                local += np.einsum('eq,qid,qjd->eij', w * gg, self.dN, self.dN)
            else:
                local += np.einsum('eq,qid,eqdc,qjc->eij', w, self.dN, gg, self.dN)
        if vv is not None:
            local += np.einsum('eq,qi,qj->eij', w * vv, self.N, self.N)
        if gv is not None:
            local += np.einsum('eq,eqd,qid,qj->eij', w, gv, self.dN, self.N)
        if vg is not None:
            local += np.einsum('eq,qi,eqd,qjd->eij', w, self.N, vg, self.dN)
        rows = np.broadcast_to(self.conn[:, :, None], local.shape).ravel()
        cols = np.broadcast_to(self.conn[:, None, :], local.shape).ravel()
        mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(self.n_dofs, self.n_dofs))
        return mat.tocsr()

    def mass_vector(self) -> np.ndarray:
        """int phi_k over the domain."""
        return self.assemble_vector(val=np.ones(self.JxW.shape))


def bordered_matrix(K: sp.spmatrix, M: np.ndarray) -> sp.csc_matrix:
    """[[K, M], [M^T, 0]]: one scalar multiplier enforcing sum_k M_k u_k = 0."""
    col = sp.csr_matrix(M.reshape(-1, 1))
    return sp.bmat([[K, col], [col.T, None]], format='csc')


def solve_zero_mean(K: sp.spmatrix, M: np.ndarray, rhs: Sequence[np.ndarray]):
    """Solve K u = rhs_j subject to M . u = 0 for each right-hand side.

    Returns the solutions (without multipliers) and the multipliers.
    """
    A = bordered_matrix(K, M)
    try:
        lu = splu(A)
    except RuntimeError as exc:
        raise SingularJacobianError(f"Bordered cell matrix is singular: {exc}") from exc
    n = K.shape[0]
    sols, mults = [], []
    for b in rhs:
        z = lu.solve(np.concatenate([b, [0.0]]))
        if not np.all(np.isfinite(z)):
            raise SingularJacobianError("Bordered cell solve produced non-finite values")
        sols.append(z[:n])
        mults.append(z[n])
    return sols, mults

"""Periodic zero-mean cell problems.

Linear (p = 2) correctors
    -div_y(a (D chi_j + e_j)) = 0,    -div_y(a D zeta) = -V,
and the parameter-dependent nonlinear problem
    -div_y A(y, xi + D chi) = -V(y) F(theta),   A(y, g) = a(y) |g|^(p-2) g,
whose solution minimizes int a/p |xi + Dw|^p + V F(theta) w over zero-mean
periodic w. Both are discretized with P1/Q1 elements and a single Lagrange
multiplier for the mean.
"""
import logging
import threading
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.optimize import brentq

from twoscale.src.config import (CACHE_QUANTUM, GAUSS_ORDER, MEAN_TOL, ORACLE_POINTS, PICARD_DELTA, RESIDUAL_TOL,
                                 SUBCELLS, UNIQUENESS_TOL)
from twoscale.src.discretization.assembly import ElementQuadrature, bordered_matrix, solve_zero_mean
from twoscale.src.discretization.functions import CellFunction
from twoscale.src.discretization.grids import CellGrid, QuadratureRule
from twoscale.src.errors import HypothesisError, SolverError
from twoscale.src.fields.periodic import MatrixField, PeriodicField, PotentialField
from twoscale.src.solvers.flux import F, RegularizedFlux
from twoscale.src.solvers.newton import SolverConfig, SolveStats, continuation_solve

logger = logging.getLogger(__name__)


class CellAssembly:
    """Quadrature data of (a, V) on one cell grid, shared by all cell solves."""

    def __init__(self, a, V: PotentialField, grid: CellGrid, subcells: int = SUBCELLS):
        if a.d != grid.d or V.d != grid.d:
            raise ValueError("a, V and the cell grid must share the dimension")
        self.a, self.V, self.grid = a, V, grid
        self.eq = ElementQuadrature(grid, QuadratureRule.tensor(grid.d, GAUSS_ORDER, subcells))
        self.a_q = a.at_quadrature(self.eq)
        self.V_q = V.at_quadrature(self.eq)
        self.M = self.eq.mass_vector()
        self.b_V = self.eq.assemble_vector(val=self.V_q)

    @property
    def discrete_mean_V(self) -> float:
        return float(np.sum(self.b_V))

    def project(self, r: np.ndarray) -> np.ndarray:
        """Remove the multiplier direction: residual tested on zero-mean functions only."""
        return r - (r @ self.M) / (self.M @ self.M) * self.M


# --- linear correctors ---

@dataclass(frozen=True, eq=False)
class LinearCorrectors:
    chi: Tuple[CellFunction, ...]
    zeta: CellFunction
    residuals: Tuple[float, ...]

    @property
    def grid(self) -> CellGrid:
        return self.zeta.grid


def solve_linear_correctors(a: Union[PeriodicField, MatrixField], V: PotentialField, cell_grid: CellGrid,
                            tol: float = RESIDUAL_TOL, assembly: Optional[CellAssembly] = None) -> LinearCorrectors:
    """chi_j for each direction and the potential corrector zeta (p = 2)."""
    asm = assembly or CellAssembly(a, V, cell_grid)
    eq, d = asm.eq, cell_grid.d
    A = asm.a_q
    K = eq.assemble_matrix(gg=A)
    rhs = []
    for j in range(d):
        e = np.zeros(d)
        e[j] = 1.0
        if A.ndim == 2:
            flux = A[..., None] * e
        else:
            flux = A @ e
        rhs.append(-eq.assemble_vector(grad=flux))
    rhs.append(-asm.b_V)
    sols, mults = solve_zero_mean(K, asm.M, rhs)

    residuals = tuple(float(np.linalg.norm(K @ s - b + lam * asm.M)) for s, b, lam in zip(sols, rhs, mults))
    if max(residuals) > tol:
        raise SolverError(f"Linear corrector residual {max(residuals):.3e} exceeds {tol:.1e}")
    logger.info("[CELL] linear correctors m=%d residual=%.2e", cell_grid.m, max(residuals))
    return LinearCorrectors(chi=tuple(CellFunction(cell_grid, s) for s in sols[:d]),
                            zeta=CellFunction(cell_grid, sols[d]), residuals=residuals)


# --- nonlinear cell problem ---

@dataclass(frozen=True, eq=False)
class NonlinearCellSolution:
    theta: float
    xi: Tuple[float, ...]
    chi: CellFunction
    q: np.ndarray
    v: float
    residual: float
    stats: Optional[SolveStats] = None


def _as_xi(xi, d):
    arr = np.atleast_1d(np.asarray(xi, dtype=float))
    if arr.shape != (d,):
        raise ValueError(f"xi must have {d} components, got {arr.shape}")
    return arr


def _check_scalar(a):
    if isinstance(a, MatrixField):
        raise ValueError("The nonlinear cell problem needs a scalar coefficient a")


def cell_residual(asm: CellAssembly, p: float, theta: float, xi, chi: np.ndarray, delta: float = 0.0) -> np.ndarray:
    """Weak residual of the cell equation at chi, multiplier direction removed."""
    g = _as_xi(xi, asm.grid.d) + asm.eq.gradient(chi)
    r = asm.eq.assemble_vector(grad=RegularizedFlux(p, delta).flux(asm.a_q, g)) + F(theta, p) * asm.b_V
    return asm.project(r)


def cell_outputs(asm: CellAssembly, p: float, xi, chi: np.ndarray) -> Tuple[np.ndarray, float]:
    """q = int A(y, xi + D chi) with the exact flux, v = int V chi."""
    g = _as_xi(xi, asm.grid.d) + asm.eq.gradient(chi)
    flux = RegularizedFlux(p, 0.0).flux(asm.a_q, g)
    q = np.einsum('eq,eqd->d', asm.eq.JxW, flux)
    v = float(asm.b_V @ chi)
    return q, v


def cell_energy(asm: CellAssembly, p: float, theta: float, xi, chi: np.ndarray, delta: float = 0.0) -> float:
    """int a/p |xi + D w|^p + V F(theta) w."""
    g = _as_xi(xi, asm.grid.d) + asm.eq.gradient(chi)
    dens = RegularizedFlux(p, delta).energy_density(asm.a_q, g)
    return asm.eq.integrate(dens) + float(F(theta, p)) * float(asm.b_V @ chi)


def _cell_system(asm: CellAssembly, p: float, theta: float, xi: np.ndarray):
    eq, n = asm.eq, asm.grid.n_dofs
    forcing = float(F(theta, p)) * asm.b_V

    def build(delta):
        flux = RegularizedFlux(p, delta)

        def split(z):
            return z[:n], z[n]

        def residual(z):
            chi, lam = split(z)
            g = xi + eq.gradient(chi)
            r = eq.assemble_vector(grad=flux.flux(asm.a_q, g)) + forcing + lam * asm.M
            return np.concatenate([r, [asm.M @ chi]])

        def jacobian(z):
            chi, _ = split(z)
            g = xi + eq.gradient(chi)
            return bordered_matrix(eq.assemble_matrix(gg=flux.tangent(asm.a_q, g)), asm.M)

        def picard(z):
            chi, _ = split(z)
            g = xi + eq.gradient(chi)
            return bordered_matrix(eq.assemble_matrix(gg=flux.frozen(asm.a_q, g, PICARD_DELTA)), asm.M)

        return residual, jacobian, picard
    return build


def solve_nonlinear_cell(a: PeriodicField, V: PotentialField, p: float, theta: float, xi, cell_grid: CellGrid,
                         config: Optional[SolverConfig] = None, init: Optional[np.ndarray] = None,
                         delta: Optional[float] = None, mean_tol: float = MEAN_TOL,
                         assembly: Optional[CellAssembly] = None) -> NonlinearCellSolution:
    """Solve the cell problem at (theta, xi).

    Without ``delta`` the full continuation schedule runs (a single stage at
    p = 2); with ``delta`` one stage at that value is solved from ``init``.
    """
    _check_scalar(a)
    if p < 2:
        raise ValueError(f"p must be >= 2, got {p}")
    asm = assembly or CellAssembly(a, V, cell_grid)
    xi = _as_xi(xi, cell_grid.d)
    theta = float(theta)
    gate = abs(float(F(theta, p)) * asm.discrete_mean_V)
    if gate > mean_tol:
        raise HypothesisError(f"Cell forcing V F(theta) has mean {gate:.3e} > {mean_tol:.1e}")

    cfg = config or SolverConfig()
    n = cell_grid.n_dofs
    z0 = np.zeros(n + 1)
    if init is not None:
        init = np.asarray(init, dtype=float)
        z0[:n] = init[:n] - np.mean(init[:n])
    if delta is not None:
        schedule = (delta,)
    elif p == 2:
        schedule = (cfg.target_delta,)
    else:
        schedule = cfg.delta_schedule
    z, stats = continuation_solve(_cell_system(asm, p, theta, xi), z0, cfg, schedule, tag="CELL")
    chi = z[:n] - np.mean(z[:n])
    if not stats.converged:
        raise SolverError(f"[CELL] theta={theta:g} xi={xi.tolist()} did not converge, "
                          f"||R||={stats.residual:.3e}", stats=stats, best=chi)
    q, v = cell_outputs(asm, p, xi, chi)
    residual = float(np.linalg.norm(cell_residual(asm, p, theta, xi, chi, schedule[-1])))
    logger.debug("[CELL] theta=%g xi=%s q=%s v=%.6e it=%d", theta, xi.tolist(), q, v, stats.iterations)
    return NonlinearCellSolution(theta=theta, xi=tuple(xi.tolist()), chi=CellFunction(cell_grid, chi),
                                 q=q, v=v, residual=residual, stats=stats)


# --- 1D constant-flux oracle ---

@dataclass(frozen=True)
class ConstantFluxOracle:
    c: float
    q: float
    v: float


def _inverse_flux(t: np.ndarray, p: float) -> np.ndarray:
    return np.sign(t) * np.abs(t) ** (1.0 / (p - 1.0))


def constant_flux_oracle(a: PeriodicField, V: PotentialField, p: float, theta: float, xi: float,
                         n_points: int = ORACLE_POINTS, order: int = 8) -> ConstantFluxOracle:
    """d = 1 solution of the cell problem by integrating the flux balance.

    a |eta|^(p-2) eta = c + F(theta) W(y) with W(y) = int_0^y V, eta = xi + chi';
    c is the root of int eta = xi. Then q = c + F(theta) int W and
    v = -int W (eta - xi).
    """
    if a.d != 1:
        raise ValueError("The constant-flux oracle is one-dimensional")
    edges = np.linspace(0.0, 1.0, n_points + 1)
    g, w = np.polynomial.legendre.leggauss(order)
    g01, w01 = 0.5 * (g + 1.0), 0.5 * w
    h = np.diff(edges)
    left = edges[:-1]
    pts = left[:, None] + h[:, None] * g01[None, :]             # (n, order)
    wts = h[:, None] * w01[None, :]

    # W at the interval edges, then at every Gauss point through a nested rule on [left, y]
    V_pts = V.sample(pts.ravel()).reshape(pts.shape)
    W_left = np.concatenate([[0.0], np.cumsum(np.sum(wts * V_pts, axis=1))])[:-1]
    sub = left[:, None, None] + (pts - left[:, None])[:, :, None] * g01[None, None, :]
    sub_w = (pts - left[:, None])[:, :, None] * w01[None, None, :]
    W = W_left[:, None] + np.sum(sub_w * V.sample(sub.ravel()).reshape(sub.shape), axis=2)

    a_pts = a.sample(pts.ravel()).reshape(pts.shape)
    Ft = float(F(theta, p))

    def mean_eta(c):
        return float(np.sum(wts * _inverse_flux((c + Ft * W) / a_pts, p))) - xi

    lo, hi = -1.0, 1.0
    while mean_eta(lo) > 0:
        lo *= 2.0
    while mean_eta(hi) < 0:
        hi *= 2.0
    c = brentq(mean_eta, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    eta = _inverse_flux((c + Ft * W) / a_pts, p)
    q = c + Ft * float(np.sum(wts * W))
    v = -float(np.sum(wts * W * (eta - xi)))
    return ConstantFluxOracle(c=c, q=q, v=v)


# --- uniqueness ---

@dataclass(frozen=True)
class UniquenessReport:
    gradient_discrepancy: Optional[float]
    value_discrepancy: Optional[float]
    converged: Tuple[bool, bool]
    passed: bool
    message: str = ""


def uniqueness_check(a: PeriodicField, V: PotentialField, p: float, theta: float, xi, inits: Sequence[np.ndarray],
                     cell_grid: CellGrid, config: Optional[SolverConfig] = None,
                     tol: float = UNIQUENESS_TOL) -> UniquenessReport:
    """Solve from two starts and compare ||D chi1 - D chi2||_p and ||chi1 - chi2||_p on Y."""
    if len(inits) != 2:
        raise ValueError("uniqueness_check needs exactly two initial guesses")
    asm = CellAssembly(a, V, cell_grid)
    sols, errors = [], []
    for init in inits:
        try:
            sols.append(solve_nonlinear_cell(a, V, p, theta, xi, cell_grid, config, init=init, assembly=asm))
        except SolverError as exc:
            sols.append(None)
            errors.append(str(exc))
    converged = (sols[0] is not None, sols[1] is not None)
    if errors:
        logger.warning("[CELL] uniqueness check incomplete: %s", "; ".join(errors))
        return UniquenessReport(None, None, converged, False, "; ".join(errors))
    diff = sols[0].chi.values - sols[1].chi.values
    eq = asm.eq
    grad = np.linalg.norm(eq.gradient(diff), axis=-1)
    grad_gap = eq.integrate(grad ** p) ** (1.0 / p)
    val_gap = eq.integrate(np.abs(eq.evaluate(diff)) ** p) ** (1.0 / p)
    passed = grad_gap <= tol and val_gap <= tol
    logger.info("[CELL] uniqueness theta=%g xi=%s |D chi1 - D chi2|=%.2e", theta, np.ravel(xi).tolist(), grad_gap)
    return UniquenessReport(grad_gap, val_gap, converged, passed)


# --- on-demand evaluation with memo table ---

@dataclass
class CacheInfo:
    hits: int = 0
    misses: int = 0
    size: int = 0


class CellFluxEvaluator:
    """(theta, xi) -> NonlinearCellSolution with a quantized memo table.

    Cached lookups snap (theta, xi) to the nearest multiple of ``quantum`` and
    solve at that centre, so every entry is a pure function of its key.
    ``exact=True`` (or ``use_cache=False``) bypasses the table.
    """

    def __init__(self, a: PeriodicField, V: PotentialField, p: float, cell_grid: CellGrid,
                 config: Optional[SolverConfig] = None, quantum: float = CACHE_QUANTUM, use_cache: bool = True,
                 n_jobs: int = 1):
        _check_scalar(a)
        if quantum <= 0:
            raise ValueError("Cache quantum must be positive")
        self.a, self.V, self.p, self.grid = a, V, p, cell_grid
        self.config = config or SolverConfig()
        self.quantum = quantum
        self.use_cache = use_cache
        self.n_jobs = n_jobs
        self.assembly = CellAssembly(a, V, cell_grid)
        self._table: Dict[tuple, NonlinearCellSolution] = {}
        self._lock = threading.Lock()
        self._info = CacheInfo()

    @property
    def d(self) -> int:
        return self.grid.d

    def key(self, theta: float, xi) -> tuple:
        state = np.concatenate([[theta], _as_xi(xi, self.d)])
        return tuple(int(k) for k in np.round(state / self.quantum))

    def _solve(self, theta, xi, init=None, delta=None):
        try:
            return solve_nonlinear_cell(self.a, self.V, self.p, theta, xi, self.grid, self.config,
                                        init=init, delta=delta, assembly=self.assembly)
        except SolverError:
            if delta is None:
                raise
            # warm start failed; fall back to the full schedule
            return solve_nonlinear_cell(self.a, self.V, self.p, theta, xi, self.grid, self.config,
                                        assembly=self.assembly)

    def evaluate(self, theta: float, xi, exact: bool = False,
                 init: Optional[np.ndarray] = None) -> NonlinearCellSolution:
        if exact or not self.use_cache:
            delta = None if init is None or self.p == 2 else self.config.target_delta
            return self._solve(float(theta), _as_xi(xi, self.d), init=init, delta=delta)
        key = self.key(theta, xi)
        with self._lock:
            hit = self._table.get(key)
            if hit is not None:
                self._info.hits += 1
                return hit
            self._info.misses += 1
        centre = np.asarray(key, dtype=float) * self.quantum
        sol = self._solve(centre[0], centre[1:])
        with self._lock:
            sol = self._table.setdefault(key, sol)
            self._info.size = len(self._table)
        return sol

    def __call__(self, theta: float, xi) -> Tuple[np.ndarray, float]:
        sol = self.evaluate(theta, xi)
        return sol.q, sol.v

    def evaluate_many(self, states: Sequence[Tuple[float, np.ndarray]], exact: bool = False,
                      inits: Optional[Sequence[Optional[np.ndarray]]] = None) -> List[NonlinearCellSolution]:
        inits = inits if inits is not None else [None] * len(states)
        return Parallel(n_jobs=self.n_jobs, backend='threading')(
            delayed(self.evaluate)(theta, xi, exact, init) for (theta, xi), init in zip(states, inits))

    def cache_info(self) -> CacheInfo:
        with self._lock:
            return CacheInfo(self._info.hits, self._info.misses, len(self._table))

    def flux_table(self) -> pd.DataFrame:
        xi_cols = [f"xi{i + 1}" if self.d > 1 else "xi" for i in range(self.d)]
        q_cols = [f"q{i + 1}" if self.d > 1 else "q" for i in range(self.d)]
        with self._lock:
            entries = [self._table[k] for k in sorted(self._table)]
        rows = [[s.theta, *s.xi, *np.asarray(s.q).tolist(), s.v, s.residual] for s in entries]
        return pd.DataFrame(rows, columns=['theta', *xi_cols, *q_cols, 'v', 'residual'])

    def tabulate(self, thetas: Sequence[float], xis: Sequence) -> pd.DataFrame:
        """Fill the table on a tensor grid of states and return it."""
        states = [(t, x) for t in thetas for x in xis]
        self.evaluate_many(states)
        return self.flux_table()

    def export_table(self, path: str) -> str:
        from twoscale.src.scripts.reports import write_frame
        return write_frame(self.flux_table(), path)

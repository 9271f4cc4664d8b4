"""Nonlinear homogenized macro problem in HMM form.

Each macro quadrature point x_k queries the cell problem at
(theta, xi) = (u_h(x_k), Du_h(x_k)) and the macro residual is

    R_i = sum_k w_k [q_k . D phi_i(x_k) + v_k F'(theta_k) phi_i(x_k)] - int f phi_i.

The outer iteration first runs relaxed Picard on cached (quantized) cell
data, then finishes on exact cell solves, by Newton with finite-difference
flux derivatives when ``macro_newton`` is set and by Picard otherwise.
"""
import logging
from dataclasses import dataclass, replace
from typing import Dict, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed

from twoscale.src.config import MACRO_MAX_ITERATIONS, MACRO_RESIDUAL_TOL, RELAXATION
from twoscale.src.discretization.functions import CellFunction, MacroFunction
from twoscale.src.discretization.grids import MacroGrid
from twoscale.src.errors import SingularJacobianError, SolverError
from twoscale.src.models.cell_problems import cell_outputs, cell_residual
from twoscale.src.models.effective import NonlinearEffectiveEvaluator, macro_quadrature, source_vector
from twoscale.src.solvers.flux import F_prime, F_second
from twoscale.src.solvers.newton import SolveStats, SolverConfig, linear_solve, solve_residual

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TwoScalePair:
    """Macro solution u and the cell data at every macro quadrature point.

    ``chi[k]`` is u1(x_k, .) when correctors were kept.
    """
    u: MacroFunction
    points: np.ndarray
    weights: np.ndarray
    theta: np.ndarray
    xi: np.ndarray
    q: np.ndarray
    v: np.ndarray
    chi: Optional[Tuple[CellFunction, ...]] = None
    converged: bool = True
    r_global: float = float('nan')
    r_local: float = float('nan')
    stats: Optional[SolveStats] = None

    @property
    def n_points(self) -> int:
        return len(self.weights)

    def u1(self, k: int) -> CellFunction:
        if self.chi is None:
            raise ValueError("Correctors were not kept for this pair")
        return self.chi[k]

    def with_correctors(self, chi) -> "TwoScalePair":
        return replace(self, chi=tuple(chi))


def initial_guess(evaluator: NonlinearEffectiveEvaluator, f, grid: MacroGrid) -> np.ndarray:
    """Interior values of the Poisson problem with the harmonic mean of a."""
    eq = macro_quadrature(grid)
    K = eq.assemble_matrix(gg=np.full(eq.JxW.shape, evaluator.a_harmonic))
    idx = grid.interior
    return linear_solve(K[idx][:, idx], source_vector(eq, f)[idx])


class _MacroSystem:
    def __init__(self, evaluator: NonlinearEffectiveEvaluator, f, p: float, grid: MacroGrid,
                 config: SolverConfig):
        self.evaluator, self.p, self.grid, self.config = evaluator, p, grid, config
        self.eq = macro_quadrature(grid)
        self.shape = self.eq.JxW.shape
        self.idx = grid.interior
        self.load = source_vector(self.eq, f)[self.idx]
        self.points = self.eq.flat_points
        self.weights = self.eq.JxW.ravel()
        self.n_jobs = evaluator.cells.n_jobs
        self.warm: Dict[int, np.ndarray] = {}

    def full(self, U_int) -> np.ndarray:
        U = np.zeros(self.grid.n_dofs)
        U[self.idx] = U_int
        return U

    def states(self, U_int):
        U = self.full(U_int)
        theta = self.eq.evaluate(U).ravel()
        xi = self.eq.gradient(U).reshape(-1, self.grid.d)
        return theta, xi

    def _one(self, k, theta, xi, exact):
        try:
            return self.evaluator.evaluate(theta, xi, exact=exact, init=self.warm.get(k) if exact else None)
        except SolverError as exc:
            raise SolverError(f"[MACRO] cell solve failed at x={self.points[k].tolist()} "
                              f"(theta={theta:g}, xi={np.ravel(xi).tolist()}): {exc}",
                              stats=exc.stats, best=exc.best) from exc

    def query(self, U_int, exact: bool):
        theta, xi = self.states(U_int)
        sols = Parallel(n_jobs=self.n_jobs, backend='threading')(
            delayed(self._one)(k, theta[k], xi[k], exact) for k in range(len(theta)))
        if exact:
            for k, sol in enumerate(sols):
                self.warm[k] = sol.chi.values
        return theta, xi, sols

    def assemble_residual(self, theta, q, v) -> np.ndarray:
        val = (v * F_prime(theta, self.p)).reshape(self.shape)
        grad = q.reshape(self.shape + (self.grid.d,))
        return self.eq.assemble_vector(val=val, grad=grad)[self.idx] - self.load

    def residual(self, U_int, exact: bool) -> np.ndarray:
        theta, _, sols = self.query(U_int, exact)
        q = np.array([np.asarray(s.q) for s in sols])
        v = np.array([s.v for s in sols])
        return self.assemble_residual(theta, q, v)

    def jacobian(self, U_int):
        theta, xi = self.states(U_int)
        ders = Parallel(n_jobs=self.n_jobs, backend='threading')(
            delayed(self.evaluator.derivatives)(theta[k], xi[k], self.warm.get(k)) for k in range(len(theta)))
        d = self.grid.d
        dq_dxi = np.array([dr[0] for dr in ders]).reshape(self.shape + (d, d))
        dq_dth = np.array([dr[1] for dr in ders]).reshape(self.shape + (d,))
        dv_dxi = np.array([dr[2] for dr in ders])
        dv_dth = np.array([dr[3] for dr in ders])
        v = np.array([self.evaluator.evaluate(theta[k], xi[k], exact=True, init=self.warm.get(k)).v
                      for k in range(len(theta))])
        Fp = F_prime(theta, self.p)
        vg = (Fp[:, None] * dv_dxi).reshape(self.shape + (d,))
        vv = (Fp * dv_dth + v * F_second(theta, self.p, self.config.target_delta)).reshape(self.shape)
        J = self.eq.assemble_matrix(gg=dq_dxi, gv=dq_dth, vg=vg, vv=vv)
        return J[self.idx][:, self.idx]

    def stiffness(self, U_int):
        """Frozen-weight operator a_harm (p-1) (|xi|^2 + delta0^2)^((p-2)/2)."""
        _, xi = self.states(U_int)
        s = np.sum(xi * xi, axis=-1) + self.config.delta_schedule[0] ** 2
        kappa = self.evaluator.a_harmonic * (self.p - 1.0) * s ** ((self.p - 2.0) / 2.0)
        K = self.eq.assemble_matrix(gg=kappa.reshape(self.shape))
        return K[self.idx][:, self.idx]


def _relaxed_picard(residual, stiffness, U, tol: float, max_iterations: int, relaxation: float,
                    cfg: SolverConfig, tag: str, quiet: bool = False):
    stats = SolveStats()
    U = np.array(U, dtype=float, copy=True)
    R = residual(U)
    r = float(np.linalg.norm(R))
    stats.initial_residual = r
    stats.history.append(r)
    for _ in range(max_iterations):
        if r <= tol:
            stats.converged = True
            break
        d = linear_solve(stiffness(U), -R, cfg.linear_tol)
        alpha, step = relaxation, None
        while alpha >= cfg.min_step:
            U_try = U + alpha * d
            R_try = residual(U_try)
            r_try = float(np.linalg.norm(R_try))
            if np.isfinite(r_try) and r_try < r:
                step = (U_try, R_try, r_try)
                break
            stats.damping_events += 1
            alpha *= cfg.backtrack
        if step is None:
            (logger.debug if quiet else logger.warning)("[%s] Picard stagnated at ||R||=%.3e", tag, r)
            break
        U, R, r = step
        stats.iterations += 1
        stats.picard_steps += 1
        stats.history.append(r)
        logger.debug("[%s] it=%d ||R||=%.3e", tag, stats.iterations, r)
    else:
        stats.converged = r <= tol
    stats.residual = r
    return U, stats


def solve_macro_nonlinear(evaluator: NonlinearEffectiveEvaluator, f, p: float, grid: MacroGrid,
                          config: Optional[SolverConfig] = None, relaxation: float = RELAXATION,
                          macro_newton: bool = True, keep_correctors: bool = False,
                          init: Optional[MacroFunction] = None, tol: Optional[float] = None,
                          max_iterations: int = MACRO_MAX_ITERATIONS) -> TwoScalePair:
    """Solve the coupled macro problem; a pair that missed ``tol`` comes back with converged=False."""
    if evaluator.p != p:
        raise ValueError(f"Evaluator was built for p={evaluator.p}, not p={p}")
    if evaluator.d != grid.d:
        raise ValueError("Evaluator and macro grid have different dimensions")
    if not 0 < relaxation <= 1:
        raise ValueError("relaxation must lie in (0, 1]")
    cfg = config or evaluator.cells.config
    tol = max(cfg.residual_tol, MACRO_RESIDUAL_TOL) if tol is None else tol
    system = _MacroSystem(evaluator, f, p, grid, cfg)
    U = initial_guess(evaluator, f, grid) if init is None else np.asarray(init.values)[grid.interior]
    total = SolveStats()

    if evaluator.cells.use_cache:
        quantized_tol = max(tol, evaluator.cells.quantum * max(1.0, float(np.linalg.norm(system.load))))
        U, stats = _relaxed_picard(lambda X: system.residual(X, False), system.stiffness, U, quantized_tol,
                                   max_iterations, relaxation, cfg, "MACRO", quiet=True)
        total.absorb(stats, cfg.target_delta)
        logger.info("[MACRO] cached phase: %d iterations, ||R||=%.2e", stats.iterations, stats.residual)

    def exact_residual(X):
        return system.residual(X, True)

    stats = None
    if macro_newton:
        newton_cfg = cfg.model_copy(update={'residual_tol': tol})
        try:
            U_new, stats = solve_residual(exact_residual, system.jacobian, U, newton_cfg,
                                          picard=system.stiffness, tag="MACRO")
            U = U_new
        except SingularJacobianError as exc:
            logger.warning("[MACRO] Newton failed (%s); continuing with Picard", exc)
            stats = None
    if stats is None or not stats.converged:
        U, stats = _relaxed_picard(exact_residual, system.stiffness, U, tol, max_iterations, relaxation,
                                   cfg, "MACRO")
    total.absorb(stats, cfg.target_delta)

    theta, xi, sols = system.query(U, exact=True)
    u = MacroFunction.from_interior(grid, U)
    pair = TwoScalePair(u=u, points=system.points, weights=system.weights, theta=theta, xi=xi,
                        q=np.array([np.asarray(s.q) for s in sols]), v=np.array([s.v for s in sols]),
                        chi=tuple(s.chi for s in sols), converged=total.converged, stats=total)
    r_global, r_local = residual_two_scale(pair, evaluator, f, p)
    pair = replace(pair, r_global=r_global, r_local=r_local, chi=pair.chi if keep_correctors else None)
    if not pair.converged:
        logger.warning("[MACRO] not converged: ||R||=%.3e after %d iterations", total.residual, total.iterations)
    logger.info("[MACRO] p=%g n=%d r_global=%.2e r_local=%.2e", p, grid.n, r_global, r_local)
    return pair


def residual_two_scale(pair: TwoScalePair, evaluator: NonlinearEffectiveEvaluator, f, p: float):
    """Euclidean norms of the macro residual and of the worst cell residual.

    Fluxes are recomputed from the stored correctors (or from exact cell
    solves when none were kept) at the states of ``pair.u``.
    """
    if evaluator.p != p:
        raise ValueError(f"Evaluator was built for p={evaluator.p}, not p={p}")
    grid = pair.u.grid
    eq = macro_quadrature(grid)
    if eq.JxW.size != pair.n_points:
        raise ValueError("Pair and macro quadrature disagree on the number of points")
    asm = evaluator.assembly
    theta = eq.evaluate(pair.u.values).ravel()
    xi = eq.gradient(pair.u.values).reshape(-1, grid.d)
    if pair.chi is not None:
        chis = [c.values for c in pair.chi]
    else:
        chis = [evaluator.evaluate(theta[k], xi[k], exact=True).chi.values for k in range(len(theta))]

    q = np.zeros((len(theta), grid.d))
    v = np.zeros(len(theta))
    r_local = 0.0
    for k, chi in enumerate(chis):
        q[k], v[k] = cell_outputs(asm, p, xi[k], chi)
        r_local = max(r_local, float(np.linalg.norm(cell_residual(asm, p, theta[k], xi[k], chi))))
    shape = eq.JxW.shape
    R = eq.assemble_vector(val=(v * F_prime(theta, p)).reshape(shape), grad=q.reshape(shape + (grid.d,)))
    R = R[grid.interior] - source_vector(eq, f)[grid.interior]
    return float(np.linalg.norm(R)), r_local

"""The eps-scale problem

    -div(a(x/eps) |Du|^(p-2) Du) + (1/eps) V(x/eps) |u|^(p-2) u = f,  u = 0 on the boundary,

assembled either directly or in the eps-uniform form where the large
potential term is moved onto G = D Phi by parts:

    (1/eps) int V(x/eps) F(u) v = -int G(x/eps) . (F'(u) Du v + F(u) Dv).
"""
import logging
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from twoscale.src.config import ELEMENTS_PER_PERIOD, GAUSS_ORDER, GROWTH_FACTOR, PICARD_DELTA, SUBCELLS
from twoscale.src.discretization.assembly import ElementQuadrature
from twoscale.src.discretization.functions import MacroFunction
from twoscale.src.discretization.grids import MacroGrid, QuadratureRule
from twoscale.src.discretization.norms import lp_norm, w1p_norm, w1p_seminorm
from twoscale.src.errors import HomogenizationError, SolverError, UnresolvedOscillationError
from twoscale.src.fields.corrector import CorrectorPotential
from twoscale.src.fields.periodic import MatrixField, PeriodicField, PotentialField
from twoscale.src.fields.validation import require_hypotheses
from twoscale.src.harness.metrics import growth_flags
from twoscale.src.solvers.flux import F, F_prime, F_second, RegularizedFlux
from twoscale.src.solvers.newton import SolverConfig, continuation_solve

logger = logging.getLogger(__name__)

Source = Callable[[np.ndarray], np.ndarray]


def periods_per_unit(eps: float) -> int:
    """k with eps = 1/k; raises for eps that are not reciprocals of integers."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    k = int(round(1.0 / eps))
    if k < 1 or abs(1.0 / eps - k) > 1e-9 * k:
        raise ValueError(f"eps={eps!r} is not the reciprocal of an integer")
    return k


@dataclass(frozen=True, eq=False)
class EpsilonProblem:
    a: Union[PeriodicField, MatrixField]
    V: PotentialField
    f: Source
    p: float
    eps: float
    grid: MacroGrid
    subcells: int = SUBCELLS

    def __post_init__(self):
        if self.a.d != self.V.d or self.a.d != self.grid.d:
            raise ValueError("a, V and the macro grid must share the dimension")
        if self.p < 2:
            raise ValueError(f"p must be >= 2, got {self.p}")
        if isinstance(self.a, MatrixField) and self.p != 2:
            raise ValueError("Matrix coefficients are supported only for p = 2")
        k = periods_per_unit(self.eps)
        periods = k * (self.grid.upper - self.grid.lower)
        if abs(periods - round(periods)) > 1e-9:
            raise ValueError(f"Domain does not hold a whole number of periods for eps={self.eps}")
        per_period = self.grid.n / round(periods)
        if per_period < 2 or abs(per_period - round(per_period)) > 1e-9:
            raise UnresolvedOscillationError(
                f"Grid with n={self.grid.n} does not resolve eps={self.eps} "
                f"(need an integer >= 2 of elements per period)")
        require_hypotheses(self.a, self.V)

    @classmethod
    def build(cls, a, V, f: Source, p: float, eps: float, d: int = 1,
              elements_per_period: int = ELEMENTS_PER_PERIOD, lower: float = 0.0, upper: float = 1.0,
              subcells: int = SUBCELLS) -> "EpsilonProblem":
        k = periods_per_unit(eps)
        n = int(round(k * (upper - lower))) * elements_per_period
        return cls(a=a, V=V, f=f, p=p, eps=eps, grid=MacroGrid(d=d, n=n, lower=lower, upper=upper),
                   subcells=subcells)

    def at(self, eps: float) -> "EpsilonProblem":
        """Same data at another eps, keeping the number of elements per period."""
        length = self.grid.upper - self.grid.lower
        per_period = self.grid.n // int(round(periods_per_unit(self.eps) * length))
        n = int(round(periods_per_unit(eps) * length)) * per_period
        return replace(self, eps=eps, grid=MacroGrid(d=self.grid.d, n=n, lower=self.grid.lower,
                                                     upper=self.grid.upper))

    def quadrature(self) -> ElementQuadrature:
        return ElementQuadrature(self.grid, QuadratureRule.tensor(self.grid.d, GAUSS_ORDER, self.subcells))


class _Assembly:
    """Precomputed eps-traces and residual/Jacobian builders for one problem."""

    def __init__(self, prob: EpsilonProblem, corrector: Optional[CorrectorPotential] = None):
        self.prob = prob
        self.eq = prob.quadrature()
        self.a_q = prob.a.at_quadrature(self.eq, prob.eps)
        self.V_q = prob.V.at_quadrature(self.eq, prob.eps)
        self.G_q = None if corrector is None else corrector.at_quadrature(self.eq, prob.eps)
        self.load = self.eq.assemble_vector(val=np.asarray(prob.f(self.eq.flat_points), dtype=float)
                                            .reshape(self.eq.JxW.shape))
        self.interior = prob.grid.interior

    def full(self, U_int):
        U = np.zeros(self.prob.grid.n_dofs)
        U[self.interior] = U_int
        return U

    def build(self, delta: float):
        p, eps, eq = self.prob.p, self.prob.eps, self.eq
        flux = RegularizedFlux(p, delta)
        idx = self.interior

        def fields(U_int):
            U = self.full(U_int)
            return eq.evaluate(U), eq.gradient(U)

        if self.G_q is None:
            def residual(U_int):
                u, g = fields(U_int)
                R = eq.assemble_vector(val=self.V_q * F(u, p) / eps, grad=flux.flux(self.a_q, g))
                return (R - self.load)[idx]

            def jacobian(U_int):
                u, g = fields(U_int)
                J = eq.assemble_matrix(gg=flux.tangent(self.a_q, g), vv=self.V_q * F_prime(u, p) / eps)
                return J[idx][:, idx]
        else:
            G = self.G_q

            def residual(U_int):
                u, g = fields(U_int)
                Gg = np.sum(G * g, axis=-1)
                val = -Gg * F_prime(u, p)
                grad = flux.flux(self.a_q, g) - F(u, p)[..., None] * G
                return (eq.assemble_vector(val=val, grad=grad) - self.load)[idx]

            def jacobian(U_int):
                u, g = fields(U_int)
                Fp = F_prime(u, p)
                Gg = np.sum(G * g, axis=-1)
                J = eq.assemble_matrix(gg=flux.tangent(self.a_q, g),
                                       vv=-Gg * F_second(u, p, delta),
                                       vg=-Fp[..., None] * G,
                                       gv=-Fp[..., None] * G)
                return J[idx][:, idx]

        def picard(U_int):
            u, g = fields(U_int)
            frozen = flux.frozen(self.a_q, g, PICARD_DELTA)
            vv = None if self.G_q is not None else self.V_q * np.abs(u) ** (p - 2.0) / eps
            return eq.assemble_matrix(gg=frozen, vv=vv)[idx][:, idx]

        return residual, jacobian, picard


def _schedule(prob: EpsilonProblem, cfg: SolverConfig):
    return (cfg.target_delta,) if prob.p == 2 else cfg.delta_schedule


def _solve(prob: EpsilonProblem, config: Optional[SolverConfig], corrector, init, tag):
    cfg = config or SolverConfig()
    asm = _Assembly(prob, corrector)
    U0 = np.zeros(len(asm.interior)) if init is None else np.asarray(init.values)[asm.interior]
    U, stats = continuation_solve(asm.build, U0, cfg, _schedule(prob, cfg), tag=tag)
    if not stats.converged:
        raise SolverError(f"[{tag}] eps={prob.eps:g} did not converge, ||R||={stats.residual:.3e}",
                          stats=stats, best=MacroFunction.from_interior(prob.grid, U))
    logger.info("[%s] eps=%g p=%g n=%d iterations=%d ||R||=%.2e", tag, prob.eps, prob.p,
                prob.grid.n, stats.iterations, stats.residual)
    return MacroFunction.from_interior(prob.grid, U), stats


def solve_epsilon(prob: EpsilonProblem, config: Optional[SolverConfig] = None,
                  init: Optional[MacroFunction] = None):
    """Solve the direct weak form; returns (u_eps, SolveStats)."""
    return _solve(prob, config, None, init, "EPS")


def solve_epsilon_ibp(prob: EpsilonProblem, corrector: CorrectorPotential, config: Optional[SolverConfig] = None,
                      init: Optional[MacroFunction] = None):
    """Solve the eps-uniform form with the potential term carried by G = D Phi."""
    if corrector.grid.d != prob.grid.d:
        raise ValueError("Corrector potential and problem have different dimensions")
    return _solve(prob, config, corrector, init, "EPS-IBP")


def potential_terms(prob: EpsilonProblem, corrector: CorrectorPotential, u: MacroFunction):
    """Both discretizations of (1/eps) int V(x/eps) F(u) phi_i at a fixed u.

    Returns (direct, by_parts) vectors over all dofs.
    """
    asm = _Assembly(prob, corrector)
    eq, p, eps = asm.eq, prob.p, prob.eps
    val, grad = eq.evaluate(u.values), eq.gradient(u.values)
    direct = eq.assemble_vector(val=asm.V_q * F(val, p) / eps)
    Gg = np.sum(asm.G_q * grad, axis=-1)
    by_parts = eq.assemble_vector(val=-Gg * F_prime(val, p), grad=-F(val, p)[..., None] * asm.G_q)
    return direct, by_parts


def operator_pair(prob: EpsilonProblem, delta: float = 0.0, ibp_corrector: Optional[CorrectorPotential] = None):
    """(residual, jacobian) on interior dofs at a given delta, for verification."""
    residual, jacobian, _ = _Assembly(prob, ibp_corrector).build(delta)
    return residual, jacobian


def principal_operator(prob: EpsilonProblem, U: MacroFunction, delta: float = 0.0) -> np.ndarray:
    """T1 U: the p-Laplacian part int a |DU|^(p-2) DU . D phi_i on all dofs."""
    eq = prob.quadrature()
    a_q = prob.a.at_quadrature(eq, prob.eps)
    return eq.assemble_vector(grad=RegularizedFlux(prob.p, delta).flux(a_q, eq.gradient(U.values)))


def _scan_row(prob: EpsilonProblem, eps: float, config: Optional[SolverConfig]):
    row = {'eps': eps}
    try:
        u, stats = solve_epsilon(prob.at(eps), config)
        row.update(Lp_norm=lp_norm(u, prob.p), W1p_seminorm=w1p_seminorm(u, prob.p),
                   W1p_norm=w1p_norm(u, prob.p), iterations=stats.iterations, residual=stats.residual,
                   status='ok', message='')
    except (HomogenizationError, ValueError) as exc:
        logger.warning("[SCAN] eps=%g failed: %s", eps, exc)
        stats = getattr(exc, 'stats', None)
        row.update(Lp_norm=np.nan, W1p_seminorm=np.nan, W1p_norm=np.nan,
                   iterations=stats.iterations if stats is not None else 0,
                   residual=stats.residual if stats is not None else np.nan,
                   status='failed', message=str(exc))
    return row


def apriori_scan(prob: EpsilonProblem, eps_list: Sequence[float], config: Optional[SolverConfig] = None,
                 growth_factor: float = GROWTH_FACTOR, n_jobs: int = 1) -> pd.DataFrame:
    """W^{1,p} norms of u_eps over an eps list.

    A row's ``growth_flag`` is set when its norm exceeds ``growth_factor``
    times the previous row's. Failed solves are recorded and the scan goes on.
    """
    for eps in eps_list:
        periods_per_unit(eps)
    rows = Parallel(n_jobs=n_jobs, backend='threading')(
        delayed(_scan_row)(prob, eps, config) for eps in eps_list)
    df = pd.DataFrame(rows, columns=['eps', 'Lp_norm', 'W1p_seminorm', 'W1p_norm', 'iterations',
                                     'residual', 'status', 'message'])
    df['growth_flag'] = growth_flags(df['W1p_norm'].to_numpy(dtype=float), growth_factor)
    logger.info("[SCAN] %d rows, growth flagged in %d", len(df), int(df['growth_flag'].sum()))
    return df

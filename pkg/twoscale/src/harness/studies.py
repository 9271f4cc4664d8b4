"""eps-sweep studies comparing u_eps against the homogenized pair (u, u1).

Each study solves the eps-problem for every eps of the list, evaluates its
functional with the oscillatory quadrature and compares it with the value the
two-scale limit predicts. Reference pairs come from the linear pipeline at
p = 2 and from the HMM macro solver otherwise, on a macro grid
2**REFERENCE_REFINEMENTS times finer than ``macro_n`` and a cell grid with
as many elements as each eps-period holds in the eps-solves.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from twoscale.src.config import (DECREASE_FACTOR, ELEMENTS_PER_PERIOD, GAP_FLOOR, GAUSS_ORDER, GROWTH_FACTOR,
                                 MEAN_TOL, QUAD_STABILITY_FRACTION, REFERENCE_REFINEMENTS, SUBCELLS)
from twoscale.src.discretization.assembly import ElementQuadrature
from twoscale.src.discretization.functions import CellFunction
from twoscale.src.discretization.grids import CellGrid, MacroGrid, QuadratureRule
from twoscale.src.discretization.norms import lp_distance
from twoscale.src.discretization.oscillatory import integrate_oscillatory
from twoscale.src.errors import CentringError, HomogenizationError
from twoscale.src.fields.corrector import solve_corrector_potential
from twoscale.src.fields.expressions import compile_expression
from twoscale.src.fields.periodic import PeriodicField, PotentialField
from twoscale.src.fields.validation import require_hypotheses
from twoscale.src.harness.metrics import bounded_growth, check_f_prime_continuity, decreasing, strictly_decreasing
from twoscale.src.harness.report import ConvergenceReport
from twoscale.src.models.cell_problems import CellFluxEvaluator, solve_linear_correctors
from twoscale.src.models.effective import (NonlinearEffectiveEvaluator, build_linear_effective, macro_quadrature,
                                           solve_macro_linear)
from twoscale.src.models.epsilon_problem import (EpsilonProblem, apriori_scan, periods_per_unit, solve_epsilon,
                                                 solve_epsilon_ibp)
from twoscale.src.models.macro import TwoScalePair, solve_macro_nonlinear
from twoscale.src.solvers.flux import F, F_prime
from twoscale.src.solvers.newton import SolverConfig

logger = logging.getLogger(__name__)

MACRO_TEST_FUNCTIONS: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    'x(1-x)': lambda pts: np.prod(pts * (1.0 - pts), axis=1),
    'cubic': lambda pts: np.prod(pts * (1.0 - pts) * (1.0 + pts), axis=1),
}


def macro_test_function(text: str, d: int = 1) -> Callable[[np.ndarray], np.ndarray]:
    """Named preset or an expression in x (x1, x2)."""
    key = text.replace(' ', '')
    if key in MACRO_TEST_FUNCTIONS:
        return MACRO_TEST_FUNCTIONS[key]
    return compile_expression(text, d=d, prefix='x')


@dataclass(frozen=True, eq=False)
class StudySpec:
    a: PeriodicField
    V: PotentialField
    f: Callable[[np.ndarray], np.ndarray]
    p: float
    eps_list: Tuple[float, ...]
    d: int = 1
    elements_per_period: int = ELEMENTS_PER_PERIOD
    subcells: int = SUBCELLS
    macro_n: int = 16
    cell_m: Optional[int] = None
    potential_m: int = 256
    phi1: str = 'x(1-x)'
    phi2: Tuple[PeriodicField, ...] = ()
    psi: Tuple[PeriodicField, ...] = ()
    form: str = 'direct'
    ansatz: str = 'split'
    alpha: float = DECREASE_FACTOR
    final_threshold: Optional[float] = None
    growth_factor: float = GROWTH_FACTOR
    mean_tol: float = MEAN_TOL
    solver: SolverConfig = field(default_factory=SolverConfig)
    n_jobs: int = 1

    def __post_init__(self):
        if self.p < 2:
            raise ValueError(f"p must be >= 2, got {self.p}")
        if len(self.eps_list) < 2:
            raise ValueError("A study needs at least two eps values")
        for e in self.eps_list:
            periods_per_unit(e)
        if any(b >= a for a, b in zip(self.eps_list, self.eps_list[1:])):
            raise ValueError("eps list must be strictly decreasing")
        if self.form not in ('direct', 'ibp'):
            raise ValueError(f"form must be 'direct' or 'ibp', got {self.form!r}")
        require_hypotheses(self.a, self.V, mean_tol=self.mean_tol)
        object.__setattr__(self, 'eps_list', tuple(float(e) for e in self.eps_list))
        if not self.phi2:
            object.__setattr__(self, 'phi2', (PeriodicField.expression('sin(2*pi*y1)', d=self.d),))
        if not self.psi:
            object.__setattr__(self, 'psi', (PeriodicField.expression('sin(2*pi*y1)', d=self.d),))

    @property
    def reference_m(self) -> int:
        return self.cell_m or self.elements_per_period

    @property
    def phi1_func(self):
        return macro_test_function(self.phi1, self.d)

    def problem(self, eps: float) -> EpsilonProblem:
        return EpsilonProblem.build(self.a, self.V, self.f, self.p, eps, d=self.d,
                                    elements_per_period=self.elements_per_period, subcells=self.subcells)

    def describe(self) -> dict:
        return {
            'a': self.a.label, 'V': self.V.label, 'p': self.p, 'd': self.d,
            'eps_list': list(self.eps_list), 'elements_per_period': self.elements_per_period,
            'subcells': self.subcells, 'macro_n': self.macro_n,
            'reference_n': self.macro_n * 2 ** REFERENCE_REFINEMENTS, 'reference_m': self.reference_m,
            'phi1': self.phi1, 'phi2': [f.label for f in self.phi2], 'psi': [f.label for f in self.psi],
            'form': self.form, 'ansatz': self.ansatz, 'alpha': self.alpha,
            'final_threshold': self.final_threshold, 'solver': self.solver.model_dump(mode='json'),
        }


def check_centring(factors: Sequence[PeriodicField], mean_tol: float = MEAN_TOL):
    for phi in factors:
        mean = phi.mean()
        if abs(mean) > mean_tol:
            raise CentringError(f"Oscillating test factor {phi.label} has mean {mean:.6g} over Y; "
                                f"the limit pairing requires zero mean")


# --- reference pair ---

def build_reference(spec: StudySpec) -> TwoScalePair:
    grid = MacroGrid(d=spec.d, n=spec.macro_n * 2 ** REFERENCE_REFINEMENTS)
    cell_grid = CellGrid(d=spec.d, m=spec.reference_m)
    if spec.p == 2:
        correctors = solve_linear_correctors(spec.a, spec.V, cell_grid)
        model = build_linear_effective(correctors, spec.a, spec.V, ansatz=spec.ansatz)
        u = solve_macro_linear(model, spec.f, grid, config=spec.solver)
        eq = macro_quadrature(grid)
        theta = eq.evaluate(u.values).ravel()
        xi = eq.gradient(u.values).reshape(-1, spec.d)
        chi = np.array([c.values for c in correctors.chi])            # (d, m^d)
        zeta = correctors.zeta.values if spec.ansatz == 'split' else np.zeros_like(correctors.zeta.values)
        u1 = xi @ chi + theta[:, None] * zeta[None, :]
        q = xi @ model.a_bar.T + (theta[:, None] * model.c_bar[None, :] if spec.ansatz == 'split' else 0.0)
        v = xi @ model.b_bar + (model.s_bar * theta if spec.ansatz == 'split' else 0.0)
        return TwoScalePair(u=u, points=eq.flat_points, weights=eq.JxW.ravel(), theta=theta, xi=xi, q=q,
                            v=v, chi=tuple(CellFunction(cell_grid, w - np.mean(w)) for w in u1))
    cells = CellFluxEvaluator(spec.a, spec.V, spec.p, cell_grid, spec.solver, n_jobs=spec.n_jobs)
    pair = solve_macro_nonlinear(NonlinearEffectiveEvaluator(cells), spec.f, spec.p, grid, spec.solver,
                                 keep_correctors=True)
    if not pair.converged:
        logger.warning("[STUDY] reference pair did not reach its tolerance (r_global=%.2e)", pair.r_global)
    return pair


def _cell_integrals(pair: TwoScalePair, factor: PeriodicField, component: Optional[int] = None) -> np.ndarray:
    """Per macro point: int_Y u1 factor, or int_Y (xi_i + d u1/dy_i) factor for ``component`` i."""
    grid = pair.chi[0].grid
    asm_eq = ElementQuadrature(grid, QuadratureRule.tensor(grid.d, GAUSS_ORDER, SUBCELLS))
    fq = factor.at_quadrature(asm_eq)
    out = np.zeros(pair.n_points)
    for k, u1 in enumerate(pair.chi):
        if component is not None:
            du1 = asm_eq.gradient(u1.values)[..., component]
            out[k] = asm_eq.integrate((pair.xi[k, component] + du1) * fq)
        else:
            out[k] = asm_eq.integrate(asm_eq.evaluate(u1.values) * fq)
    return out


# --- eps rows ---

def _solve_row(spec: StudySpec, eps: float, corrector):
    prob = spec.problem(eps)
    if spec.form == 'ibp':
        return solve_epsilon_ibp(prob, corrector, spec.solver)
    return solve_epsilon(prob, spec.solver)


def _failed_record(eps, name, exc):
    stats = getattr(exc, 'stats', None)
    return {'eps': eps, 'value': np.nan, 'limit': np.nan, 'gap': np.nan, 'quad_stability': np.nan,
            'pass': False, 'functional': name, 'iterations': stats.iterations if stats is not None else 0,
            'residual': stats.residual if stats is not None else np.nan, 'status': 'failed', 'message': str(exc)}


def _record(eps, name, value, limit, stability, stats, **extra):
    gap = abs(value - limit)
    stable = stability <= max(QUAD_STABILITY_FRACTION * gap, GAP_FLOOR)
    rec = {'eps': eps, 'value': value, 'limit': limit, 'gap': gap, 'quad_stability': stability,
           'pass': bool(stable), 'functional': name, 'iterations': stats.iterations, 'residual': stats.residual,
           'status': 'ok', 'message': ''}
    rec.update(extra)
    return rec


def _sweep(spec: StudySpec, evaluate_row: Callable, names: List[str]):
    corrector = None
    if spec.form == 'ibp':
        corrector = solve_corrector_potential(spec.V, CellGrid(d=spec.d, m=spec.potential_m))

    def row(eps):
        try:
            u_eps, stats = _solve_row(spec, eps, corrector)
            return evaluate_row(eps, u_eps, stats)
        except HomogenizationError as exc:
            logger.warning("[STUDY] eps=%g failed: %s", eps, exc)
            return [_failed_record(eps, name, exc) for name in names]
    rows = Parallel(n_jobs=spec.n_jobs, backend='threading')(delayed(row)(eps) for eps in spec.eps_list)
    return [rec for recs in rows for rec in recs]


def _flags(spec: StudySpec, records: List[dict], names: List[str]) -> Dict[str, bool]:
    flags = {'rows_ok': all(r['status'] == 'ok' for r in records),
             'quad_stable': all(bool(r['pass']) for r in records)}
    for name in names:
        gaps = [r['gap'] for r in records if r['functional'] == name]
        flags[f"{name}:decreasing"] = decreasing(gaps, spec.alpha)
        if name == 'lp_error':
            flags[f"{name}:strictly_decreasing"] = strictly_decreasing(gaps)
        if spec.final_threshold is not None:
            flags[f"{name}:final_below_threshold"] = bool(np.isfinite(gaps[-1]) and gaps[-1] <= spec.final_threshold)
    return flags


def _metadata(spec: StudySpec, reference: TwoScalePair) -> dict:
    meta = spec.describe()
    meta['reference'] = {'converged': bool(reference.converged), 'r_global': float(reference.r_global),
                         'r_local': float(reference.r_local), 'n_points': reference.n_points}
    return meta


def _finish(study, spec, records, names, reference, extra_flags=None) -> ConvergenceReport:
    flags = _flags(spec, records, names)
    flags.update(extra_flags or {})
    report = ConvergenceReport.from_records(study, records, _metadata(spec, reference), flags)
    logger.info("[STUDY] %s: %d rows, passed=%s", study, len(records), report.passed)
    return report


# --- studies ---

def study_homogenization_limit(spec: StudySpec, reference: Optional[TwoScalePair] = None) -> ConvergenceReport:
    """||u_eps - u||_p and the pairings int d_i u_eps psi(x, x/eps), one per gradient component i.

    The limit of component i is sum_k w_k phi1(x_k) int_Y (xi_i + d u1/dy_i) psi.
    """
    reference = reference or build_reference(spec)
    phi1 = spec.phi1_func
    pairings = [(f"gradient{i + 1}:{psi.label}", i, psi) for psi in spec.psi for i in range(spec.d)]
    limits = {name: float(np.sum(reference.weights * phi1(reference.points) * _cell_integrals(reference, psi, i)))
              for name, i, psi in pairings}
    names = ['lp_error'] + [name for name, _, _ in pairings]

    def evaluate_row(eps, u_eps, stats):
        err = lp_distance(u_eps, reference.u, spec.p)
        err_fine = lp_distance(u_eps, reference.u, spec.p, order=GAUSS_ORDER + 2)
        recs = [_record(eps, 'lp_error', err, 0.0, abs(err - err_fine), stats)]
        for name, i, psi in pairings:
            res = integrate_oscillatory(
                lambda x, y: u_eps.gradient(x)[:, i] * phi1(x) * psi.sample(y), eps, u_eps.grid)
            recs.append(_record(eps, name, res.value, limits[name], res.error, stats))
        return recs
    records = _sweep(spec, evaluate_row, names)
    return _finish('homogenization_limit', spec, records, names, reference)


def study_scaled_pairing(spec: StudySpec, reference: Optional[TwoScalePair] = None) -> ConvergenceReport:
    """int (u_eps / eps) phi1(x) phi2(x/eps) against sum_k w_k phi1(x_k) int_Y u1 phi2."""
    check_centring(spec.phi2, spec.mean_tol)
    reference = reference or build_reference(spec)
    phi1 = spec.phi1_func
    limits = {phi2.label: float(np.sum(reference.weights * phi1(reference.points) * _cell_integrals(reference, phi2)))
              for phi2 in spec.phi2}
    names = [f"scaled:{phi2.label}" for phi2 in spec.phi2]

    def evaluate_row(eps, u_eps, stats):
        recs = []
        for phi2 in spec.phi2:
            res = integrate_oscillatory(
                lambda x, y: u_eps.evaluate(x) / eps * phi1(x) * phi2.sample(y), eps, u_eps.grid)
            recs.append(_record(eps, f"scaled:{phi2.label}", res.value, limits[phi2.label], res.error, stats))
        return recs
    records = _sweep(spec, evaluate_row, names)
    return _finish('scaled_pairing', spec, records, names, reference)


def study_potential_pairing(spec: StudySpec, reference: Optional[TwoScalePair] = None) -> ConvergenceReport:
    """int F(u_eps)/eps phi1 phi2(x/eps) against sum_k w_k F'(u(x_k)) phi1(x_k) int_Y u1 phi2.

    Each row also carries the F' continuity check between u and u_eps.
    """
    check_centring(spec.phi2, spec.mean_tol)
    reference = reference or build_reference(spec)
    phi1, p = spec.phi1_func, spec.p
    weight = reference.weights * F_prime(reference.theta, p) * phi1(reference.points)
    limits = {phi2.label: float(np.sum(weight * _cell_integrals(reference, phi2))) for phi2 in spec.phi2}
    names = [f"potential:{phi2.label}" for phi2 in spec.phi2]

    def evaluate_row(eps, u_eps, stats):
        cont = check_f_prime_continuity(reference.u, u_eps, p)
        extra = {'continuity_kind': cont.kind, 'continuity_lhs': cont.lhs, 'continuity_rhs': cont.rhs,
                 'continuity_ratio': cont.ratio, 'continuity_holds': cont.holds}
        recs = []
        for phi2 in spec.phi2:
            res = integrate_oscillatory(
                lambda x, y: F(u_eps.evaluate(x), p) / eps * phi1(x) * phi2.sample(y), eps, u_eps.grid)
            recs.append(_record(eps, f"potential:{phi2.label}", res.value, limits[phi2.label], res.error,
                                stats, **extra))
        return recs
    records = _sweep(spec, evaluate_row, names)
    holds = all(bool(r.get('continuity_holds', False)) for r in records if r['status'] == 'ok')
    return _finish('potential_pairing', spec, records, names, reference, {'continuity_bound': holds})


def study_apriori_bound(spec: StudySpec) -> ConvergenceReport:
    """W^{1,p} norms of u_eps over the eps list; passes when they stay bounded."""
    scan = apriori_scan(spec.problem(spec.eps_list[0]), spec.eps_list, spec.solver, spec.growth_factor,
                        spec.n_jobs)
    records = []
    for _, r in scan.iterrows():
        records.append({'eps': r['eps'], 'value': r['W1p_norm'], 'limit': np.nan, 'gap': np.nan,
                        'quad_stability': np.nan, 'pass': r['status'] == 'ok' and not r['growth_flag'],
                        'functional': 'w1p_norm', 'iterations': r['iterations'], 'residual': r['residual'],
                        'status': r['status'], 'message': r['message'],
                        'Lp_norm': r['Lp_norm'], 'W1p_seminorm': r['W1p_seminorm'], 'growth_flag': r['growth_flag']})
    flags = {'rows_ok': bool((scan['status'] == 'ok').all()),
             'bounded': bounded_growth(scan['W1p_norm'].to_numpy(dtype=float), spec.growth_factor)}
    report = ConvergenceReport.from_records('apriori_bound', records, spec.describe(), flags)
    logger.info("[STUDY] apriori_bound: %d rows, passed=%s", len(records), report.passed)
    return report


STUDIES = {
    'limit': study_homogenization_limit,
    'scaled-pairing': study_scaled_pairing,
    'potential-pairing': study_potential_pairing,
    'apriori': study_apriori_bound,
}


def run_studies(names: Sequence[str], spec: StudySpec) -> List[ConvergenceReport]:
    """Run the named studies, sharing one reference pair."""
    unknown = [n for n in names if n not in STUDIES]
    if unknown:
        raise ValueError(f"Unknown studies {unknown}; choose from {sorted(STUDIES)}")
    if any(n in ('scaled-pairing', 'potential-pairing') for n in names):
        check_centring(spec.phi2, spec.mean_tol)
    reference = None
    reports = []
    for name in names:
        if name == 'apriori':
            reports.append(study_apriori_bound(spec))
            continue
        reference = reference or build_reference(spec)
        reports.append(STUDIES[name](spec, reference))
    return reports

from dataclasses import replace

import numpy as np
import pytest

from twoscale.src.discretization.functions import CellFunction
from twoscale.src.discretization.grids import CellGrid, MacroGrid
from twoscale.src.discretization.norms import lp_distance
from twoscale.src.errors import HypothesisError
from twoscale.src.fields.periodic import PeriodicField, PotentialField
from twoscale.src.models.cell_problems import CellAssembly, CellFluxEvaluator, solve_linear_correctors
from twoscale.src.models.effective import NonlinearEffectiveEvaluator, build_linear_effective, solve_macro_linear
from twoscale.src.models.macro import initial_guess, residual_two_scale, solve_macro_nonlinear
from twoscale.src.models.monolithic import _CoupledSystem, monolithic_solve
from twoscale.src.solvers.newton import check_jacobian


def one(x):
    return np.ones(len(x))


@pytest.fixture
def fields():
    return PeriodicField.from_text('trig(2, 1, 1)'), PotentialField.from_text('sin(2*pi*y)')


def test_hmm_at_p2_reproduces_linear_model(fields):
    a, V = fields
    cell_grid, grid = CellGrid(d=1, m=32), MacroGrid(d=1, n=8)
    model = build_linear_effective(solve_linear_correctors(a, V, cell_grid), a, V)
    u_lin = solve_macro_linear(model, one, grid)
    evaluator = NonlinearEffectiveEvaluator(CellFluxEvaluator(a, V, 2.0, cell_grid, use_cache=False))
    pair = solve_macro_nonlinear(evaluator, one, 2.0, grid)
    assert pair.converged
    assert lp_distance(pair.u, u_lin, 2) < 1e-7
    assert pair.r_global < 1e-8


def test_initial_guess_is_harmonic_poisson(fields):
    a, V = fields
    evaluator = NonlinearEffectiveEvaluator(CellFluxEvaluator(a, V, 3.0, CellGrid(d=1, m=32)))
    grid = MacroGrid(d=1, n=8)
    U0 = initial_guess(evaluator, one, grid)
    assert U0[len(U0) // 2] == pytest.approx(0.125 / evaluator.a_harmonic, rel=1e-10)


def test_evaluator_must_match_problem(fields):
    a, V = fields
    evaluator = NonlinearEffectiveEvaluator(CellFluxEvaluator(a, V, 3.0, CellGrid(d=1, m=16)))
    with pytest.raises(ValueError):
        solve_macro_nonlinear(evaluator, one, 2.0, MacroGrid(d=1, n=4))
    with pytest.raises(ValueError):
        solve_macro_nonlinear(evaluator, one, 3.0, MacroGrid(d=1, n=4), relaxation=0.0)


@pytest.mark.slow
def test_hmm_at_p3_converges_with_small_two_scale_residual(fields):
    a, V = fields
    cells = CellFluxEvaluator(a, V, 3.0, CellGrid(d=1, m=64))
    pair = solve_macro_nonlinear(NonlinearEffectiveEvaluator(cells), one, 3.0, MacroGrid(d=1, n=16),
                                 keep_correctors=True)
    assert pair.converged
    assert pair.r_global < 1e-8
    assert pair.r_local < 1e-8
    assert len(pair.chi) == pair.n_points
    assert cells.cache_info().misses > 0
    r_global, r_local = residual_two_scale(pair, NonlinearEffectiveEvaluator(cells), one, 3.0)
    assert r_global == pytest.approx(pair.r_global, abs=1e-10)
    assert r_local < 1e-8

    # a corrector off by 0.1 sin(2 pi y) must show up in the cell residual
    grid = pair.chi[0].grid
    bump = CellFunction.interpolate(lambda y: 0.1 * np.sin(2 * np.pi * y[:, 0]), grid)
    perturbed = replace(pair, chi=tuple(CellFunction(grid, c.values + bump.values) for c in pair.chi))
    _, r_bumped = residual_two_scale(perturbed, NonlinearEffectiveEvaluator(cells), one, 3.0)
    assert r_bumped > 1e-3


def test_pair_without_correctors_refuses_u1(fields):
    a, V = fields
    evaluator = NonlinearEffectiveEvaluator(CellFluxEvaluator(a, V, 2.0, CellGrid(d=1, m=16), use_cache=False))
    pair = solve_macro_nonlinear(evaluator, one, 2.0, MacroGrid(d=1, n=4))
    with pytest.raises(ValueError):
        pair.u1(0)


def test_monolithic_jacobian_matches_finite_differences(fields):
    a, V = fields
    system = _CoupledSystem(CellAssembly(a, V, CellGrid(d=1, m=8)), 3.0, one, MacroGrid(d=1, n=4))
    residual, jacobian, _ = system.build(0.0)
    z = np.random.default_rng(2).normal(scale=0.3, size=system.size)
    assert check_jacobian(residual, jacobian, z) < 1e-6


def test_monolithic_requires_zero_mean_potential():
    a = PeriodicField.const(1.0)
    V = PotentialField.from_text('0.2 + sin(2*pi*y)')
    with pytest.raises(HypothesisError):
        monolithic_solve(a, V, 3.0, one, MacroGrid(d=1, n=4), CellGrid(d=1, m=8))


def test_monolithic_is_one_dimensional(fields):
    with pytest.raises(ValueError):
        monolithic_solve(PeriodicField.const(1.0, d=2), PotentialField.from_text('0', d=2), 3.0, one,
                         MacroGrid(d=2, n=4), CellGrid(d=2, m=4))


@pytest.mark.slow
def test_monolithic_agrees_with_nested_solve(fields):
    a, V = fields
    macro, cell_grid = MacroGrid(d=1, n=16), CellGrid(d=1, m=64)
    mono = monolithic_solve(a, V, 3.0, one, macro, cell_grid)
    cells = CellFluxEvaluator(a, V, 3.0, cell_grid)
    pair = solve_macro_nonlinear(NonlinearEffectiveEvaluator(cells), one, 3.0, macro)
    assert mono.stats.converged
    assert lp_distance(mono.u, pair.u, 3.0) < 1e-6
    assert pair.r_global < 1e-8
    assert np.allclose(mono.q, pair.q[:, 0], atol=1e-6)

import numpy as np
import pytest

from twoscale.src.discretization.functions import MacroFunction
from twoscale.src.discretization.grids import CellGrid
from twoscale.src.discretization.norms import lp_distance, lp_norm
from twoscale.src.errors import HypothesisError, UnresolvedOscillationError
from twoscale.src.fields.corrector import solve_corrector_potential
from twoscale.src.fields.periodic import MatrixField, PeriodicField, PotentialField
from twoscale.src.models.epsilon_problem import (EpsilonProblem, apriori_scan, periods_per_unit, potential_terms,
                                                 principal_operator, solve_epsilon, solve_epsilon_ibp)


def one(x):
    return np.ones(len(x))


@pytest.fixture
def standard_fields():
    return PeriodicField.from_text('trig(2, 1, 1)'), PotentialField.from_text('sin(2*pi*y)')


def test_periods_per_unit():
    assert periods_per_unit(0.125) == 8
    assert periods_per_unit(1 / 3) == 3
    with pytest.raises(ValueError):
        periods_per_unit(0.3)


def test_poisson_baseline():
    # -u'' = 1 on (0, 1): u(1/2) = 1/8, nodally exact for P1
    prob = EpsilonProblem.build(PeriodicField.const(1.0), PotentialField.from_text('0'), one, 2.0, 0.25,
                                elements_per_period=4)
    u, stats = solve_epsilon(prob)
    assert stats.converged
    assert u.evaluate(np.array([[0.5]]))[0] == pytest.approx(0.125, abs=1e-10)
    assert u.values[0] == u.values[-1] == 0.0


def test_p_laplacian_without_potential():
    # -(|u'| u')' = 1: u(1/2) = (2/3) (1/2)^(3/2)
    prob = EpsilonProblem.build(PeriodicField.const(1.0), PotentialField.from_text('0'), one, 3.0, 0.25,
                                elements_per_period=16)
    u, stats = solve_epsilon(prob)
    assert stats.converged
    assert u.evaluate(np.array([[0.5]]))[0] == pytest.approx(2.0 / 3.0 * 0.5 ** 1.5, rel=1e-2)


def test_problem_checks(standard_fields):
    a, V = standard_fields
    with pytest.raises(ValueError):
        EpsilonProblem.build(a, V, one, 1.5, 0.25)
    with pytest.raises(ValueError):
        EpsilonProblem.build(MatrixField([a]), V, one, 3.0, 0.25)
    with pytest.raises(UnresolvedOscillationError):
        EpsilonProblem.build(a, V, one, 2.0, 0.25, elements_per_period=1)


def test_hypotheses_are_enforced_before_solving(standard_fields):
    a, V = standard_fields
    with pytest.raises(HypothesisError, match='not positive'):
        EpsilonProblem.build(PeriodicField.from_text('sin(2*pi*y)'), V, one, 2.0, 0.25)
    with pytest.raises(HypothesisError, match='non-zero mean'):
        EpsilonProblem.build(a, PotentialField.from_text('0.1 + sin(2*pi*y)'), one, 2.0, 0.25)


def test_at_keeps_elements_per_period(standard_fields):
    a, V = standard_fields
    prob = EpsilonProblem.build(a, V, one, 2.0, 0.25, elements_per_period=6)
    finer = prob.at(0.125)
    assert finer.grid.n == 48
    assert finer.eps == 0.125


def test_direct_and_by_parts_potential_terms_agree(standard_fields):
    a, V = standard_fields
    prob = EpsilonProblem.build(a, V, one, 3.0, 0.25, elements_per_period=16)
    corrector = solve_corrector_potential(V, CellGrid(d=1, m=256))
    u = MacroFunction.interpolate(lambda x: np.sin(np.pi * x[:, 0]), prob.grid)
    direct, by_parts = potential_terms(prob, corrector, u)
    idx = prob.grid.interior
    assert np.max(np.abs(direct[idx] - by_parts[idx])) <= 1e-2 * np.max(np.abs(direct[idx]))


def test_direct_and_ibp_solutions_agree(standard_fields):
    a, V = standard_fields
    prob = EpsilonProblem.build(a, V, one, 2.0, 0.125, elements_per_period=16)
    corrector = solve_corrector_potential(V, CellGrid(d=1, m=256))
    u_direct, _ = solve_epsilon(prob)
    u_ibp, _ = solve_epsilon_ibp(prob, corrector)
    assert np.max(np.abs(u_direct.values - u_ibp.values)) <= 1e-2 * np.max(np.abs(u_direct.values))


def test_principal_operator_vanishes_on_zero(standard_fields):
    a, V = standard_fields
    prob = EpsilonProblem.build(a, V, one, 3.0, 0.25, elements_per_period=4)
    assert np.all(principal_operator(prob, MacroFunction.zeros(prob.grid)) == 0.0)


def test_apriori_scan_rows(standard_fields):
    a, V = standard_fields
    prob = EpsilonProblem.build(a, V, one, 2.0, 0.5, elements_per_period=8)
    scan = apriori_scan(prob, [0.5, 0.25, 0.125])
    assert list(scan['eps']) == [0.5, 0.25, 0.125]
    assert (scan['status'] == 'ok').all()
    assert not scan['growth_flag'].iloc[0]
    assert np.all(np.isfinite(scan['W1p_norm']))


@pytest.mark.slow
@pytest.mark.parametrize('eps', [1 / 8, 1 / 16, 1 / 32, 1 / 64])
def test_nonlinear_solve_from_rest_converges(standard_fields, eps):
    # p = 3: the tangent at U = 0 is a * delta, so the first stage relies on the Picard floor or a bridge
    a, V = standard_fields
    prob = EpsilonProblem.build(a, V, one, 3.0, eps)
    u, stats = solve_epsilon(prob)
    assert stats.converged
    assert stats.residual <= 1e-10
    assert stats.stages[-1].delta == 1e-8
    assert 0.0 < u.evaluate(np.array([[0.5]]))[0] < 0.5


@pytest.mark.slow
@pytest.mark.parametrize('eps', [1 / 8, 1 / 16])
def test_direct_and_ibp_solutions_agree_at_p3(standard_fields, eps):
    a, V = standard_fields
    prob = EpsilonProblem.build(a, V, one, 3.0, eps)
    corrector = solve_corrector_potential(V, CellGrid(d=1, m=1024))
    u_direct, _ = solve_epsilon(prob)
    u_ibp, _ = solve_epsilon_ibp(prob, corrector)
    assert lp_distance(u_direct, u_ibp, 2) <= 1e-4 * lp_norm(u_direct, 2)

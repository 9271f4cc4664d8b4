import json

import numpy as np
import pytest

from twoscale.src.discretization.functions import MacroFunction
from twoscale.src.discretization.grids import MacroGrid
from twoscale.src.errors import CentringError, HypothesisError
from twoscale.src.fields.periodic import PeriodicField, PotentialField
from twoscale.src.harness.metrics import (bounded_growth, check_f_prime_continuity, decreasing, growth_flags,
                                          strictly_decreasing)
from twoscale.src.harness.report import REPORT_COLUMNS, ConvergenceReport
from twoscale.src.harness.studies import (StudySpec, check_centring, macro_test_function, run_studies,
                                          study_apriori_bound, study_homogenization_limit)


def one(x):
    return np.ones(len(x))


def test_decreasing():
    assert decreasing([1.0, 0.6, 0.4], alpha=0.5)
    assert not decreasing([1.0, 0.9, 0.8], alpha=0.5)
    assert decreasing([1e-13, 2e-13], alpha=0.5)
    assert decreasing([1.0, np.nan, 0.1])
    assert not decreasing([1.0])
    assert strictly_decreasing([3.0, 2.0, 1.0])
    assert not strictly_decreasing([3.0, 3.0, 1.0])


def test_growth():
    assert growth_flags([1.0, 1.05, 1.3], factor=1.1) == [False, False, True]
    assert bounded_growth([1.0, 1.05, 1.1], factor=1.1)
    assert not bounded_growth([1.0, 1.0, 2.0], factor=1.1)
    assert not bounded_growth([1.0, np.inf])


@pytest.mark.parametrize('p, kind', [(2.0, 'constant'), (2.5, 'holder'), (3.0, 'lipschitz'), (4.0, 'lipschitz')])
def test_f_prime_continuity(p, kind):
    u = MacroFunction.interpolate(lambda x: np.sin(np.pi * x[:, 0]), MacroGrid(d=1, n=16))
    v = MacroFunction.interpolate(lambda x: 0.9 * np.sin(np.pi * x[:, 0]) + 0.05 * x[:, 0] * (1 - x[:, 0]),
                                  MacroGrid(d=1, n=32))
    check = check_f_prime_continuity(u, v, p)
    assert check.kind == kind
    assert check.holds


def test_report_layout_and_json():
    records = [
        {'eps': 0.5, 'value': 1.0, 'limit': 0.9, 'gap': 0.1, 'quad_stability': 1e-5, 'pass': True,
         'functional': 'f', 'iterations': 3, 'residual': 1e-12, 'status': 'ok', 'message': '', 'extra': 7},
        {'eps': 0.25, 'value': 0.95, 'limit': 0.9, 'gap': 0.05, 'quad_stability': 1e-5, 'pass': True,
         'functional': 'f', 'iterations': 3, 'residual': 1e-12, 'status': 'ok', 'message': '', 'extra': 8},
    ]
    report = ConvergenceReport.from_records('demo', records, {'p': 2.0}, {'f:decreasing': True})
    assert list(report.to_frame().columns[:len(REPORT_COLUMNS)]) == REPORT_COLUMNS
    assert report.to_frame().columns[-1] == 'extra'
    assert report.passed
    assert report.functionals() == ['f']
    payload = json.loads(json.dumps(report.to_dict()))
    assert payload['rows'][1]['gap'] == 0.05
    assert payload['flags'] == {'f:decreasing': True}


def test_empty_report_does_not_pass():
    report = ConvergenceReport.from_records('empty', [])
    assert not report.passed
    assert list(report.to_frame().columns[:len(REPORT_COLUMNS)]) == REPORT_COLUMNS


def test_centring_gate():
    check_centring([PeriodicField.from_text('sin(2*pi*y)')])
    with pytest.raises(CentringError):
        check_centring([PeriodicField.from_text('1 + sin(2*pi*y)')])


def test_centring_runs_before_any_solve():
    spec = StudySpec(a=PeriodicField.const(1.0), V=PotentialField.from_text('sin(2*pi*y)'), f=one, p=2.0,
                     eps_list=(0.5, 0.25), phi2=(PeriodicField.from_text('cos(2*pi*y)**2'),))
    with pytest.raises(CentringError):
        run_studies(['limit', 'scaled-pairing'], spec)


def test_macro_test_functions():
    pts = np.array([[0.5]])
    assert macro_test_function('x(1-x)')(pts)[0] == pytest.approx(0.25)
    assert macro_test_function('x*x')(pts)[0] == pytest.approx(0.25)


def test_study_spec_checks():
    a, V = PeriodicField.const(1.0), PotentialField.from_text('0')
    with pytest.raises(ValueError):
        StudySpec(a=a, V=V, f=one, p=2.0, eps_list=(0.25,))
    with pytest.raises(ValueError):
        StudySpec(a=a, V=V, f=one, p=2.0, eps_list=(0.25, 0.5))
    with pytest.raises(ValueError):
        StudySpec(a=a, V=V, f=one, p=2.0, eps_list=(0.5, 0.3))
    with pytest.raises(HypothesisError):
        StudySpec(a=a, V=PotentialField.from_text('0.1 + sin(2*pi*y)'), f=one, p=2.0, eps_list=(0.5, 0.25))
    with pytest.raises(HypothesisError):
        StudySpec(a=PeriodicField.const(-1.0), V=V, f=one, p=2.0, eps_list=(0.5, 0.25))


@pytest.mark.slow
def test_homogenization_limit_without_potential():
    spec = StudySpec(a=PeriodicField.from_text('trig(2, 1, 1)'), V=PotentialField.from_text('0'), f=one, p=2.0,
                     eps_list=(0.5, 0.25, 0.125), elements_per_period=8, macro_n=8)
    report = study_homogenization_limit(spec)
    lp = report.functional('lp_error')
    assert len(lp) == 3
    assert (lp['status'] == 'ok').all()
    assert report.flags['lp_error:decreasing']
    assert 'lp_error:strictly_decreasing' in report.flags
    assert report.metadata['reference']['converged']
    assert [n.split(':')[0] for n in report.functionals()] == ['lp_error', 'gradient1']


@pytest.mark.slow
def test_gradient_pairing_runs_per_component_in_2d():
    spec = StudySpec(a=PeriodicField.from_text('prod_trig(2, 1, 1)', d=2), V=PotentialField.from_text('0', d=2),
                     f=one, p=2.0, eps_list=(0.5, 0.25), d=2, elements_per_period=4, macro_n=4)
    report = study_homogenization_limit(spec)
    assert [n.split(':')[0] for n in report.functionals()] == ['lp_error', 'gradient1', 'gradient2']
    assert report.flags['rows_ok']
    assert np.all(np.isfinite(report.rows['limit'].to_numpy(dtype=float)))


@pytest.mark.slow
def test_apriori_study_is_bounded():
    spec = StudySpec(a=PeriodicField.from_text('trig(2, 1, 1)'), V=PotentialField.from_text('sin(2*pi*y)'),
                     f=one, p=2.0, eps_list=(0.5, 0.25, 0.125), elements_per_period=8)
    report = study_apriori_bound(spec)
    assert report.flags['rows_ok']
    assert report.flags['bounded']
    assert report.functionals() == ['w1p_norm']


@pytest.mark.slow
def test_run_studies_shares_one_reference():
    spec = StudySpec(a=PeriodicField.from_text('trig(2, 1, 1)'), V=PotentialField.from_text('sin(2*pi*y)'),
                     f=one, p=2.0, eps_list=(0.5, 0.25), elements_per_period=8, macro_n=4)
    reports = run_studies(['limit', 'scaled-pairing', 'potential-pairing'], spec)
    assert [r.study for r in reports] == ['homogenization_limit', 'scaled_pairing', 'potential_pairing']
    limits = [r.metadata['reference']['n_points'] for r in reports]
    assert len(set(limits)) == 1
    potential = reports[2].to_frame()
    assert 'continuity_kind' in potential.columns
    assert (potential['continuity_kind'] == 'constant').all()


SWEEP = (1 / 8, 1 / 16, 1 / 32, 1 / 64)


@pytest.mark.slow
def test_linear_limit_error_halves_with_eps():
    spec = StudySpec(a=PeriodicField.from_text('trig(2, 1, 1)'), V=PotentialField.from_text('0'), f=one, p=2.0,
                     eps_list=SWEEP, macro_n=32, alpha=0.25)
    report = study_homogenization_limit(spec)
    assert report.flags['rows_ok']
    assert report.flags['lp_error:strictly_decreasing']
    assert report.flags['lp_error:decreasing']
    errors = report.functional('lp_error')['gap'].to_numpy(dtype=float)
    assert errors[-1] <= 0.25 * errors[0]


@pytest.fixture(scope='module')
def nonlinear_sweep():
    spec = StudySpec(a=PeriodicField.from_text('trig(2, 1, 1)'), V=PotentialField.from_text('sin(2*pi*y)'),
                     f=one, p=3.0, eps_list=SWEEP, cell_m=64)
    reports = run_studies(['limit', 'scaled-pairing', 'potential-pairing', 'apriori'], spec)
    return {r.study: r for r in reports}


@pytest.mark.slow
def test_nonlinear_limit_error_decreases(nonlinear_sweep):
    report = nonlinear_sweep['homogenization_limit']
    assert report.flags['rows_ok']
    assert report.flags['lp_error:decreasing']
    errors = report.functional('lp_error')['gap'].to_numpy(dtype=float)
    assert errors[-1] <= 0.5 * errors[0]


@pytest.mark.slow
def test_nonlinear_sweep_is_bounded(nonlinear_sweep):
    report = nonlinear_sweep['apriori_bound']
    assert report.flags['rows_ok']
    assert report.flags['bounded']
    norms = report.functional('w1p_norm')['value'].to_numpy(dtype=float)
    assert norms.max() <= 1.1 * norms[:2].max()


@pytest.mark.slow
@pytest.mark.parametrize('study', ['potential_pairing', 'scaled_pairing'])
def test_nonlinear_pairing_gaps_decrease(nonlinear_sweep, study):
    report = nonlinear_sweep[study]
    assert report.flags['rows_ok']
    for name in report.functionals():
        assert report.flags[f"{name}:decreasing"], name
    if study == 'potential_pairing':
        assert report.flags['quad_stable']

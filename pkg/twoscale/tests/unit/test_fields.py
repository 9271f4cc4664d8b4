import numpy as np
import pytest

from twoscale.src.discretization.grids import CellGrid
from twoscale.src.errors import ConfigError, HypothesisError
from twoscale.src.fields.corrector import solve_corrector_potential
from twoscale.src.fields.expressions import compile_expression, split_arguments
from twoscale.src.fields.periodic import MatrixField, PeriodicField, PotentialField, coefficient_from_text
from twoscale.src.fields.validation import validate_hypotheses


def test_trig_preset_sample():
    a = PeriodicField.from_text('trig(2, 1, 1)')
    # 2 + sin(2 pi * 1.25) = 2 + sin(pi/2)
    assert a.sample(1.25)[0] == pytest.approx(3.0, abs=1e-12)


def test_fields_are_periodic():
    a = PeriodicField.from_text('2 + cos(2*pi*y)*sin(4*pi*y)')
    y = np.linspace(0.0, 1.0, 37)
    assert np.allclose(a.sample(y), a.sample(y + 3.0), atol=1e-12)
    assert np.allclose(a.sample(y), a.sample(y - 2.0), atol=1e-12)


def test_presets():
    assert np.allclose(PeriodicField.from_text('const(3)').sample([0.1, 0.7]), 3.0)
    pw = PeriodicField.from_text('piecewise(1, 2)')
    assert pw.sample(0.25)[0] == 1.0
    assert pw.sample(0.75)[0] == 2.0
    prod = PeriodicField.from_text('prod_trig(1, 2, 1)', d=2)
    assert prod.sample(np.array([[0.25, 0.25]]))[0] == pytest.approx(3.0)


def test_expression_grammar():
    f = compile_expression('x1 * (1 - x2) + pi', d=2, prefix='x')
    assert f(np.array([[0.5, 0.5]]))[0] == pytest.approx(0.25 + np.pi)
    assert split_arguments('2, 1/2, -1') == [2.0, 0.5, -1.0]


@pytest.mark.parametrize('text', ['__import__("os")', 'z + 1', 'sin(y, y)', 'y +'])
def test_expression_rejects_unsupported_input(text):
    with pytest.raises(ConfigError):
        compile_expression(text)


def test_potential_mean_is_quadrature_exact():
    V = PotentialField.from_text('sin(2*pi*y)')
    assert abs(V.mean_residual) < 1e-14
    shifted = PotentialField.from_text('0.25 + sin(2*pi*y)')
    assert shifted.mean_residual == pytest.approx(0.25, abs=1e-12)


def test_nodal_field_from_csv(tmp_path):
    path = tmp_path / 'a.csv'
    path.write_text('1\n2\n3\n2\n')
    a = PeriodicField.from_text(str(path))
    assert a.is_nodal
    assert a.sample([0.0, 0.25, 0.5, 0.125])[:3].tolist() == [1.0, 2.0, 3.0]
    assert a.sample(0.125)[0] == pytest.approx(1.5)
    # y = 1 wraps onto y = 0
    assert a.sample(1.0)[0] == pytest.approx(1.0)


def test_matrix_field():
    A = coefficient_from_text('matrix(const(2); const(0.5); const(1))', d=2)
    assert isinstance(A, MatrixField)
    vals = A.sample(np.array([[0.3, 0.6]]))
    assert vals.shape == (1, 2, 2)
    assert vals[0, 0, 1] == vals[0, 1, 0] == 0.5
    lam = A.min_eigenvalue(np.array([[0.3, 0.6]]))[0]
    assert lam == pytest.approx(1.5 - np.sqrt(0.5))


def test_validation_passes_for_standard_pair():
    a = PeriodicField.from_text('trig(2, 1, 1)')
    V = PotentialField.from_text('sin(2*pi*y)')
    report = validate_hypotheses(a, V, 64)
    assert report.passed
    assert report.failures == []
    assert report.min_a == pytest.approx(1.0, abs=1e-3)


def test_validation_reports_each_failure():
    a = PeriodicField.from_text('sin(2*pi*y)')
    V = PotentialField.from_text('0.1 + sin(2*pi*y)')
    report = validate_hypotheses(a, V, 64)
    assert not report.passed
    assert any('positive' in f for f in report.failures)
    assert any('mean' in f for f in report.failures)


def test_validation_dimension_mismatch():
    with pytest.raises(ValueError):
        validate_hypotheses(PeriodicField.const(1.0, d=2), PotentialField.from_text('0'), 8)


def test_corrector_potential_matches_closed_form():
    # Phi'' = sin(2 pi y)  ->  Phi = -sin(2 pi y) / (4 pi^2)
    V = PotentialField.from_text('sin(2*pi*y)')
    corr = solve_corrector_potential(V, CellGrid(d=1, m=64))
    assert corr.phi.evaluate(np.array([[0.25]]))[0] == pytest.approx(-1.0 / (4 * np.pi ** 2), rel=1e-3)
    assert abs(corr.phi.mean) < 1e-12


def test_corrector_potential_requires_zero_mean():
    V = PotentialField.from_text('1 + sin(2*pi*y)')
    with pytest.raises(HypothesisError):
        solve_corrector_potential(V, CellGrid(d=1, m=16))

import numpy as np
import pytest

from twoscale.src.discretization.assembly import ElementQuadrature, solve_zero_mean
from twoscale.src.discretization.functions import CellFunction, MacroFunction
from twoscale.src.discretization.grids import CellGrid, MacroGrid, QuadratureRule
from twoscale.src.discretization.norms import lp_distance, lp_norm, w1p_norm, w1p_seminorm
from twoscale.src.discretization.oscillatory import integrate_oscillatory
from twoscale.src.errors import UnresolvedOscillationError


def hat(pts):
    return 1.0 - np.abs(2.0 * pts[:, 0] - 1.0)


@pytest.mark.parametrize('d, order, subcells', [(1, 3, 1), (1, 2, 4), (2, 3, 2)])
def test_quadrature_weights_sum_to_one(d, order, subcells):
    rule = QuadratureRule.tensor(d, order, subcells)
    assert rule.weights.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.all((rule.points > 0) & (rule.points < 1))


def test_grid_sizes():
    g = MacroGrid(d=2, n=4)
    assert g.n_dofs == 25
    assert len(g.interior) == 9
    c = CellGrid(d=2, m=4)
    assert c.n_dofs == 16
    assert c.connectivity.max() == 15


def test_invalid_grids():
    with pytest.raises(ValueError):
        MacroGrid(d=3)
    with pytest.raises(ValueError):
        CellGrid(m=1)
    with pytest.raises(ValueError):
        MacroGrid(lower=1.0, upper=0.0)


def test_hat_norms():
    u = MacroFunction.interpolate(hat, MacroGrid(d=1, n=8))
    assert lp_norm(u, 2) == pytest.approx(np.sqrt(1.0 / 3.0), abs=1e-12)
    assert w1p_seminorm(u, 2) == pytest.approx(2.0, abs=1e-12)
    assert w1p_norm(u, 2) == pytest.approx(np.sqrt(1.0 / 3.0 + 4.0), abs=1e-12)
    assert lp_norm(u, np.inf) == pytest.approx(1.0)


def test_lp_distance_across_grids():
    coarse = MacroFunction.interpolate(hat, MacroGrid(d=1, n=4))
    fine = MacroFunction.interpolate(hat, MacroGrid(d=1, n=16))
    assert lp_distance(coarse, fine, 2) < 1e-12
    assert lp_distance(fine, coarse.scaled(0.5), 2) == pytest.approx(0.5 * np.sqrt(1.0 / 3.0), abs=1e-12)


def test_macro_function_rejects_boundary_values():
    grid = MacroGrid(d=1, n=4)
    with pytest.raises(ValueError):
        MacroFunction(grid, np.ones(grid.n_dofs))


def test_cell_function_zero_mean():
    grid = CellGrid(d=1, m=8)
    with pytest.raises(ValueError):
        CellFunction(grid, np.ones(grid.n_dofs))
    chi = CellFunction.interpolate(lambda y: 1.0 + np.cos(2 * np.pi * y[:, 0]), grid)
    assert abs(chi.mean) < 1e-15
    # evaluation is periodic
    assert chi.evaluate(np.array([[0.3]]))[0] == pytest.approx(chi.evaluate(np.array([[1.3]]))[0])


def test_zero_mean_solve():
    grid = CellGrid(d=1, m=32)
    eq = ElementQuadrature(grid, order=3)
    K = eq.assemble_matrix(gg=np.ones(eq.JxW.shape))
    M = eq.mass_vector()
    b = eq.assemble_vector(val=np.sin(2 * np.pi * eq.points[..., 0]))
    (u,), (lam,) = solve_zero_mean(K, M, [b])
    assert abs(M @ u) < 1e-14
    assert abs(lam) < 1e-12
    assert np.linalg.norm(K @ u - b) < 1e-12


def test_assembled_matrix_is_symmetric_for_tensor_coefficient():
    grid = CellGrid(d=2, m=4)
    eq = ElementQuadrature(grid, order=2)
    A = np.broadcast_to(np.array([[2.0, 0.3], [0.3, 1.0]]), eq.JxW.shape + (2, 2))
    K = eq.assemble_matrix(gg=A).toarray()
    assert np.allclose(K, K.T)
    assert np.allclose(K.sum(axis=1), 0.0)


def test_oscillatory_integral_of_sine():
    # int_0^1 sin(2 pi x / 0.3) dx = 0.3 / (2 pi) * (1 - cos(2 pi / 0.3))
    exact = 0.3 / (2 * np.pi) * (1.0 - np.cos(2 * np.pi / 0.3))
    res = integrate_oscillatory(lambda x, y: np.sin(2 * np.pi * y[:, 0]), 0.3, MacroGrid(d=1, n=4))
    assert exact == pytest.approx(0.071620, abs=1e-6)
    assert res.value == pytest.approx(exact, abs=1e-6)
    assert res.error < 1e-6


def test_oscillatory_integral_refuses_unresolved_eps():
    with pytest.raises(UnresolvedOscillationError):
        integrate_oscillatory(lambda x, y: y[:, 0], 1e-6, MacroGrid(d=1, n=2), max_subdivisions=64)

"""Checks of the standing hypotheses on a and V: positivity, periodicity, zero mean."""
import logging
from typing import List, Union

import numpy as np
from pydantic import BaseModel

from twoscale.src.config import GAUSS_ORDER, HYPOTHESIS_SAMPLES, MEAN_TOL, PERIODICITY_TOL
from twoscale.src.discretization.assembly import ElementQuadrature
from twoscale.src.discretization.grids import CellGrid
from twoscale.src.errors import HypothesisError
from twoscale.src.fields.periodic import MatrixField, PeriodicField, PotentialField

logger = logging.getLogger(__name__)


class ValidationReport(BaseModel):
    d: int
    a_label: str
    V_label: str
    min_a: float                # estimate of the ellipticity constant M
    max_abs_a: float
    periodicity_defect: float
    periodic: bool
    mean_residual: float
    mean_tol: float
    n_samples: int
    passed: bool
    failures: List[str] = []


def _sample_points(grid: CellGrid) -> np.ndarray:
    eq = ElementQuadrature(grid, order=GAUSS_ORDER)
    return np.concatenate([grid.nodes, eq.flat_points])


def validate_hypotheses(a: Union[PeriodicField, MatrixField], V: PotentialField,
                        sample_grid: Union[CellGrid, int], mean_tol: float = MEAN_TOL) -> ValidationReport:
    """Sample a and V on a cell grid and report the hypothesis checks.

    Passes iff min a > 0 (smallest eigenvalue for matrix fields) and
    |int_Y V| <= mean_tol.
    """
    if a.d != V.d:
        raise ValueError(f"Dimension mismatch: a has d={a.d}, V has d={V.d}")
    if isinstance(sample_grid, int):
        if sample_grid < 1:
            raise ValueError("Empty sample grid")
        sample_grid = CellGrid(d=a.d, m=max(sample_grid, 2))
    if sample_grid.d != a.d:
        raise ValueError(f"Sample grid has d={sample_grid.d}, fields have d={a.d}")

    pts = _sample_points(sample_grid)
    if len(pts) == 0:
        raise ValueError("Empty sample grid")

    if isinstance(a, MatrixField):
        a_vals = a.min_eigenvalue(pts)
        a_shift = a.min_eigenvalue(pts + 1.0)
        max_abs = float(np.max(np.abs(a.sample(pts))))
    else:
        a_vals = a.sample(pts)
        a_shift = a.sample(pts + 1.0)
        max_abs = float(np.max(np.abs(a_vals)))
    v_vals = V.sample(pts)
    v_shift = V.sample(pts - 1.0)
    defect = float(max(np.max(np.abs(a_vals - a_shift)), np.max(np.abs(v_vals - v_shift))))

    failures = []
    min_a = float(np.min(a_vals))
    if not min_a > 0.0:
        failures.append(f"a is not positive: min sampled value {min_a:.6g}")
    periodic = defect <= PERIODICITY_TOL * max(1.0, max_abs)
    if not periodic:
        failures.append(f"periodicity defect {defect:.3e}")
    if abs(V.mean_residual) > mean_tol:
        failures.append(f"V has non-zero mean {V.mean_residual:.6g} (tol {mean_tol:.1e})")

    report = ValidationReport(
        d=a.d, a_label=a.label, V_label=V.label, min_a=min_a, max_abs_a=max_abs,
        periodicity_defect=defect, periodic=periodic, mean_residual=float(V.mean_residual),
        mean_tol=mean_tol, n_samples=len(pts), passed=not failures, failures=failures)
    logger.info("[VALIDATE] a=%s V=%s min_a=%.4g mean(V)=%.2e passed=%s",
                a.label, V.label, min_a, V.mean_residual, report.passed)
    return report


def require_hypotheses(a: Union[PeriodicField, MatrixField], V: PotentialField,
                       sample_grid: Union[CellGrid, int] = HYPOTHESIS_SAMPLES,
                       mean_tol: float = MEAN_TOL) -> ValidationReport:
    """validate_hypotheses that raises HypothesisError on any failure."""
    report = validate_hypotheses(a, V, sample_grid, mean_tol)
    if not report.passed:
        raise HypothesisError("; ".join(report.failures), report=report)
    return report

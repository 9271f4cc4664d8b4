"""Immutable P1/Q1 functions on macro and cell grids."""
from dataclasses import dataclass
from typing import Callable

import numpy as np
import pandas as pd

from twoscale.src.config import MEAN_TOL
from twoscale.src.discretization.assembly import shape_functions
from twoscale.src.discretization.grids import CellGrid, MacroGrid


def _readonly(values) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


class _GridFunction:
    """Shared point evaluation for nodal functions; subclasses provide grid and values."""

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        elem, local = self.grid.locate(points)
        N, _ = shape_functions(local, self.grid.d)
        return np.sum(self.values[self.grid.connectivity[elem]] * N, axis=1)

    def gradient(self, points: np.ndarray) -> np.ndarray:
        """Elementwise gradient; on element faces the element found by ``locate`` wins."""
        elem, local = self.grid.locate(points)
        _, dN = shape_functions(local, self.grid.d)
        vals = self.values[self.grid.connectivity[elem]]
        return np.einsum('nk,nkd->nd', vals, dN) / self.grid.h

    def to_frame(self) -> pd.DataFrame:
        nodes = self.grid.nodes
        cols = {f"x{i + 1}" if self.grid.d > 1 else "x": nodes[:, i] for i in range(self.grid.d)}
        cols["value"] = np.asarray(self.values)
        return pd.DataFrame(cols)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True, eq=False)
class MacroFunction(_GridFunction):
    """Nodal values on a MacroGrid; with ``dirichlet`` the boundary values are exactly 0."""
    grid: MacroGrid
    values: np.ndarray
    dirichlet: bool = True

    def __post_init__(self):
        vals = _readonly(self.values)
        if vals.shape != (self.grid.n_dofs,):
            raise ValueError(f"Expected {self.grid.n_dofs} nodal values, got {vals.shape}")
        if self.dirichlet and np.any(vals[self.grid.boundary_mask] != 0.0):
            raise ValueError("Dirichlet-flagged MacroFunction has non-zero boundary values")
        object.__setattr__(self, 'values', vals)

    @classmethod
    def zeros(cls, grid: MacroGrid) -> "MacroFunction":
        return cls(grid, np.zeros(grid.n_dofs))

    @classmethod
    def from_interior(cls, grid: MacroGrid, interior_values: np.ndarray) -> "MacroFunction":
        full = np.zeros(grid.n_dofs)
        full[grid.interior] = interior_values
        return cls(grid, full)

    @classmethod
    def interpolate(cls, func: Callable, grid: MacroGrid, dirichlet: bool = True) -> "MacroFunction":
        vals = np.asarray(func(grid.nodes), dtype=float)
        vals = np.broadcast_to(vals, (grid.n_dofs,)).copy()
        if not np.all(np.isfinite(vals)):
            bad = grid.nodes[~np.isfinite(vals)][0]
            raise ValueError(f"Non-finite value at node {bad.tolist()}")
        if dirichlet:
            vals[grid.boundary_mask] = 0.0
        return cls(grid, vals, dirichlet=dirichlet)

    @property
    def interior_values(self) -> np.ndarray:
        return self.values[self.grid.interior]

    def scaled(self, c: float) -> "MacroFunction":
        return MacroFunction(self.grid, c * self.values, self.dirichlet)


@dataclass(frozen=True, eq=False)
class CellFunction(_GridFunction):
    """Periodic nodal values on a CellGrid with zero mean over Y."""
    grid: CellGrid
    values: np.ndarray
    mean_tol: float = MEAN_TOL

    def __post_init__(self):
        vals = _readonly(self.values)
        if vals.shape != (self.grid.n_dofs,):
            raise ValueError(f"Expected {self.grid.n_dofs} nodal values, got {vals.shape}")
        mean = float(np.mean(vals))
        if abs(mean) > self.mean_tol * max(1.0, float(np.max(np.abs(vals)))):
            raise ValueError(f"CellFunction mean {mean:.3e} exceeds tolerance {self.mean_tol:.1e}")
        object.__setattr__(self, 'values', vals)

    @property
    def mean(self) -> float:
        # int phi_k = h^d for every periodic node, so the mean is the nodal average
        return float(np.mean(self.values))

    @classmethod
    def zeros(cls, grid: CellGrid) -> "CellFunction":
        return cls(grid, np.zeros(grid.n_dofs))

    @classmethod
    def interpolate(cls, func: Callable, grid: CellGrid, zero_mean: bool = True) -> "CellFunction":
        vals = np.asarray(func(grid.nodes), dtype=float)
        vals = np.broadcast_to(vals, (grid.n_dofs,)).copy()
        if not np.all(np.isfinite(vals)):
            bad = grid.nodes[~np.isfinite(vals)][0]
            raise ValueError(f"Non-finite value at node {bad.tolist()}")
        if zero_mean:
            vals = vals - np.mean(vals)
        return cls(grid, vals)

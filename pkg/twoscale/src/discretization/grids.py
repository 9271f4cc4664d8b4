"""Uniform tensor grids on the macro domain and on the unit periodicity cell.

Both grids number vertices lexicographically with axis 0 fastest. Local vertex
k of an element sits at offset ((k >> axis) & 1) along each axis, which is the
ordering the Q1 shape functions in ``assembly`` rely on.
"""
from dataclasses import dataclass
from functools import cached_property
from typing import Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss


def _local_offsets(d: int) -> np.ndarray:
    k = np.arange(2 ** d)
    return np.stack([(k >> axis) & 1 for axis in range(d)], axis=1)


def _element_multi_index(n: int, d: int) -> np.ndarray:
    idx = np.indices((n,) * d).reshape(d, -1).T
    # lexicographic with axis 0 fastest
    return idx[:, ::-1] if d > 1 else idx


def _flatten(multi: np.ndarray, size: int) -> np.ndarray:
    out = np.zeros(multi.shape[:-1], dtype=np.int64)
    stride = 1
    for axis in range(multi.shape[-1]):
        out += multi[..., axis] * stride
        stride *= size
    return out


@dataclass(frozen=True)
class MacroGrid:
    """Box Omega = prod [lower, upper] split into n elements per axis."""
    d: int = 1
    n: int = 16
    lower: float = 0.0
    upper: float = 1.0

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"MacroGrid supports d in (1, 2), got {self.d}")
        if self.n < 2:
            raise ValueError(f"MacroGrid needs n >= 2 elements per axis, got {self.n}")
        if not self.upper > self.lower:
            raise ValueError(f"Empty domain ({self.lower}, {self.upper})")

    @property
    def periodic(self) -> bool:
        return False

    @property
    def h(self) -> float:
        return (self.upper - self.lower) / self.n

    @property
    def n_elements(self) -> int:
        return self.n ** self.d

    @property
    def n_dofs(self) -> int:
        return (self.n + 1) ** self.d

    @property
    def measure(self) -> float:
        return (self.upper - self.lower) ** self.d

    @cached_property
    def element_index(self) -> np.ndarray:
        return _element_multi_index(self.n, self.d)

    @cached_property
    def connectivity(self) -> np.ndarray:
        verts = self.element_index[:, None, :] + _local_offsets(self.d)[None, :, :]
        return _flatten(verts, self.n + 1)

    @cached_property
    def element_origin(self) -> np.ndarray:
        return self.lower + self.h * self.element_index

    @cached_property
    def nodes(self) -> np.ndarray:
        idx = _element_multi_index(self.n + 1, self.d)
        return self.lower + self.h * idx

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        idx = _element_multi_index(self.n + 1, self.d)
        return np.any((idx == 0) | (idx == self.n), axis=1)

    @cached_property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask)

    def refine(self, factor: int = 2) -> "MacroGrid":
        return MacroGrid(d=self.d, n=self.n * factor, lower=self.lower, upper=self.upper)

    def locate(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Element index and reference coordinates in [0, 1]^d for each point."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        t = (points - self.lower) / self.h
        cell = np.clip(np.floor(t), 0, self.n - 1).astype(np.int64)
        local = t - cell
        return _flatten(cell, self.n), local


@dataclass(frozen=True)
class CellGrid:
    """Unit cell Y = (0, 1)^d with m elements per axis and opposite faces identified."""
    d: int = 1
    m: int = 64

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"CellGrid supports d in (1, 2), got {self.d}")
        if self.m < 2:
            raise ValueError(f"CellGrid needs m >= 2 elements per axis, got {self.m}")

    @property
    def periodic(self) -> bool:
        return True

    @property
    def lower(self) -> float:
        return 0.0

    @property
    def h(self) -> float:
        return 1.0 / self.m

    @property
    def n_elements(self) -> int:
        return self.m ** self.d

    @property
    def n_dofs(self) -> int:
        return self.m ** self.d

    @property
    def measure(self) -> float:
        return 1.0

    @cached_property
    def element_index(self) -> np.ndarray:
        return _element_multi_index(self.m, self.d)

    @cached_property
    def connectivity(self) -> np.ndarray:
        verts = self.element_index[:, None, :] + _local_offsets(self.d)[None, :, :]
        return _flatten(verts % self.m, self.m)

    @cached_property
    def element_origin(self) -> np.ndarray:
        return self.h * self.element_index

    @cached_property
    def nodes(self) -> np.ndarray:
        """Coordinates of the free (identified) nodes."""
        return self.h * _element_multi_index(self.m, self.d)

    def refine(self, factor: int = 2) -> "CellGrid":
        return CellGrid(d=self.d, m=self.m * factor)

    def locate(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        y = points - np.floor(points)
        t = y * self.m
        cell = np.clip(np.floor(t), 0, self.m - 1).astype(np.int64)
        return _flatten(cell, self.m), t - cell


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Tensor Gauss rule on the reference element [0, 1]^d.

    Each axis is split into ``subcells`` equal pieces carrying ``order``
    Gauss-Legendre points. Weights are positive and sum to one.
    """
    points: np.ndarray
    weights: np.ndarray
    order: int = 3
    subcells: int = 1

    @classmethod
    def tensor(cls, d: int, order: int = 3, subcells: int = 1) -> "QuadratureRule":
        if order < 1 or subcells < 1:
            raise ValueError(f"Invalid rule order={order} subcells={subcells}")
        g, w = leggauss(order)
        g = 0.5 * (g + 1.0)
        w = 0.5 * w
        offsets = np.arange(subcells)
        x1 = ((offsets[:, None] + g[None, :]) / subcells).ravel()
        w1 = np.tile(w / subcells, subcells)
        if d == 1:
            return cls(points=x1[:, None], weights=w1, order=order, subcells=subcells)
        xx = np.stack(np.meshgrid(x1, x1, indexing='ij'), axis=-1).reshape(-1, 2)
        # axis 0 fastest to match the vertex ordering
        xx = xx[:, ::-1]
        ww = np.outer(w1, w1).ravel()
        return cls(points=xx, weights=ww, order=order, subcells=subcells)

    @property
    def n_points(self) -> int:
        return len(self.weights)

"""Y-periodic coefficient fields a(y), V(y) and their presets.

Every field wraps its argument into [0, 1)^d before evaluating, so
``field.sample(y) == field.sample(y + k)`` for integer shifts k.
"""
import logging
import re
from typing import Callable, Optional, Sequence

import numpy as np

from twoscale.src.config import GAUSS_ORDER, MEAN_SAMPLES
from twoscale.src.discretization.assembly import ElementQuadrature, shape_functions
from twoscale.src.discretization.grids import CellGrid
from twoscale.src.errors import ConfigError
from twoscale.src.fields.expressions import compile_expression, split_arguments

logger = logging.getLogger(__name__)

SMOOTH = "smooth"
PIECEWISE = "piecewise-constant"


def wrap(y: np.ndarray) -> np.ndarray:
    return y - np.floor(y)


def _as_points(y, d):
    pts = np.asarray(y, dtype=float)
    if pts.ndim == 0:
        pts = pts.reshape(1, 1)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1) if d == 1 else pts.reshape(1, d)
    if pts.shape[-1] != d:
        raise ValueError(f"Expected points of dimension {d}, got shape {pts.shape}")
    return pts.reshape(-1, d)


class PeriodicField:
    """Scalar Y-periodic field given by an expression or by nodal samples."""

    def __init__(self, d: int, func: Optional[Callable] = None, nodal: Optional[np.ndarray] = None,
                 smoothness: str = SMOOTH, label: str = ""):
        if d not in (1, 2):
            raise ValueError(f"Fields support d in (1, 2), got {d}")
        if (func is None) == (nodal is None):
            raise ValueError("PeriodicField needs exactly one of func or nodal")
        self.d = d
        self.smoothness = smoothness
        self.label = label
        self._func = func
        self._nodal = None
        self._nodal_grid = None
        if nodal is not None:
            values = np.array(nodal, dtype=float).ravel()
            m = int(round(len(values) ** (1.0 / d)))
            if m ** d != len(values) or m < 2:
                raise ValueError(f"{len(values)} nodal values do not form an m^{d} periodic grid")
            if not np.all(np.isfinite(values)):
                raise ValueError("Nodal field contains non-finite values")
            values.setflags(write=False)
            self._nodal = values
            self._nodal_grid = CellGrid(d=d, m=m)

    @property
    def is_nodal(self) -> bool:
        return self._nodal is not None

    def sample(self, y) -> np.ndarray:
        """Values at y (scalar, (N,) for d = 1, or (N, d)); the argument is wrapped first."""
        pts = wrap(_as_points(y, self.d))
        if self._func is not None:
            return np.asarray(self._func(pts), dtype=float).reshape(len(pts))
        elem, local = self._nodal_grid.locate(pts)
        N, _ = shape_functions(local, self.d)
        return np.sum(self._nodal[self._nodal_grid.connectivity[elem]] * N, axis=1)

    def __call__(self, y) -> np.ndarray:
        return self.sample(y)

    def at_quadrature(self, eq: ElementQuadrature, scale: float = 1.0) -> np.ndarray:
        """Field values at the points of ``eq`` divided by ``scale`` (the eps trace)."""
        return self.sample(eq.flat_points / scale).reshape(eq.JxW.shape)

    def mean(self, m: int = MEAN_SAMPLES, order: int = GAUSS_ORDER) -> float:
        eq = ElementQuadrature(CellGrid(d=self.d, m=m), order=order)
        return eq.integrate(self.at_quadrature(eq))

    def __repr__(self):
        return f"PeriodicField(d={self.d}, {self.label or 'nodal'})"

    # --- presets ---
    @classmethod
    def const(cls, c: float, d: int = 1) -> "PeriodicField":
        return cls(d, func=lambda pts: np.full(len(pts), float(c)), label=f"const({c:g})")

    @classmethod
    def trig(cls, A: float, B: float, k: float = 1, d: int = 1) -> "PeriodicField":
        """A + B * sum_i sin(2 pi k y_i)."""
        def func(pts):
            return A + B * np.sum(np.sin(2.0 * np.pi * k * pts), axis=1)
        return cls(d, func=func, label=f"trig({A:g}, {B:g}, {k:g})")

    @classmethod
    def prod_trig(cls, A: float, B: float, k: float = 1, d: int = 1) -> "PeriodicField":
        """A + B * prod_i sin(2 pi k y_i)."""
        def func(pts):
            return A + B * np.prod(np.sin(2.0 * np.pi * k * pts), axis=1)
        return cls(d, func=func, label=f"prod_trig({A:g}, {B:g}, {k:g})")

    @classmethod
    def piecewise(cls, values: Sequence[float], d: int = 1) -> "PeriodicField":
        """Equal-width layers along y1 taking the given values (a laminate for d = 2)."""
        vals = np.asarray(values, dtype=float)
        if vals.size == 0:
            raise ValueError("piecewise() needs at least one value")

        def func(pts):
            idx = np.minimum((pts[:, 0] * len(vals)).astype(np.int64), len(vals) - 1)
            return vals[idx]
        label = "piecewise(" + ", ".join(f"{v:g}" for v in vals) + ")"
        return cls(d, func=func, smoothness=PIECEWISE, label=label)

    @classmethod
    def expression(cls, text: str, d: int = 1) -> "PeriodicField":
        return cls(d, func=compile_expression(text, d=d, prefix='y'), label=f"expr({text})")

    @classmethod
    def from_nodal(cls, values, d: int = 1, label: str = "nodal") -> "PeriodicField":
        return cls(d, nodal=values, label=label)

    @classmethod
    def from_text(cls, text: str, d: int = 1) -> "PeriodicField":
        """Parse a preset: const(c), trig(A, B, k), prod_trig(A, B, k), piecewise(v...),
        expr(...), a path to a nodal CSV, or a bare expression in y."""
        text = text.strip()
        if text.lower().endswith('.csv'):
            from twoscale.src.ingestion.loader import load_nodal_values
            return cls.from_nodal(load_nodal_values(text), d=d, label=text)
        match = re.fullmatch(r'(const|trig|prod_trig|piecewise|expr)\s*\((.*)\)', text, flags=re.S)
        if match is None:
            return cls.expression(text, d=d)
        name, body = match.groups()
        if name == 'expr':
            return cls.expression(body, d=d)
        args = split_arguments(body)
        try:
            if name == 'const':
                return cls.const(*args, d=d)
            if name == 'trig':
                return cls.trig(*args, d=d)
            if name == 'prod_trig':
                return cls.prod_trig(*args, d=d)
            return cls.piecewise(args, d=d)
        except TypeError as exc:
            raise ConfigError(f"Bad arguments for preset '{text}': {exc}") from exc


class PotentialField:
    """Periodic potential V together with the quadrature value of its mean."""

    def __init__(self, base: PeriodicField, m: int = MEAN_SAMPLES):
        self.base = base
        self.mean_residual = base.mean(m=m)

    @property
    def d(self) -> int:
        return self.base.d

    @property
    def label(self) -> str:
        return self.base.label

    @property
    def smoothness(self) -> str:
        return self.base.smoothness

    def sample(self, y) -> np.ndarray:
        return self.base.sample(y)

    def __call__(self, y) -> np.ndarray:
        return self.base.sample(y)

    def at_quadrature(self, eq: ElementQuadrature, scale: float = 1.0) -> np.ndarray:
        return self.base.at_quadrature(eq, scale)

    def is_zero(self) -> bool:
        samples = np.linspace(0.0, 1.0, 17)[:-1]
        pts = np.stack(np.meshgrid(*([samples] * self.d), indexing='ij'), axis=-1).reshape(-1, self.d)
        return bool(np.all(self.sample(pts) == 0.0))

    @classmethod
    def from_text(cls, text: str, d: int = 1) -> "PotentialField":
        return cls(PeriodicField.from_text(text, d=d))

    def __repr__(self):
        return f"PotentialField({self.base.label}, mean={self.mean_residual:.2e})"


class MatrixField:
    """Symmetric 2x2 (or 1x1) periodic coefficient for the linear p = 2 path."""

    def __init__(self, entries: Sequence[PeriodicField]):
        entries = list(entries)
        d = entries[0].d
        if d == 1 and len(entries) != 1 or d == 2 and len(entries) != 3:
            raise ValueError("MatrixField needs [a] for d = 1 or [a11, a12, a22] for d = 2")
        if any(e.d != d for e in entries):
            raise ValueError("MatrixField entries must share the dimension")
        self.d = d
        self.entries = entries
        self.label = "matrix(" + ", ".join(e.label for e in entries) + ")"
        self.smoothness = PIECEWISE if any(e.smoothness == PIECEWISE for e in entries) else SMOOTH

    def sample(self, y) -> np.ndarray:
        """(N, d, d) symmetric matrices."""
        vals = [e.sample(y) for e in self.entries]
        if self.d == 1:
            return vals[0][:, None, None]
        a11, a12, a22 = vals
        return np.stack([np.stack([a11, a12], -1), np.stack([a12, a22], -1)], -2)

    def __call__(self, y) -> np.ndarray:
        return self.sample(y)

    def at_quadrature(self, eq: ElementQuadrature, scale: float = 1.0) -> np.ndarray:
        vals = self.sample(eq.flat_points / scale)
        return vals.reshape(eq.JxW.shape + (self.d, self.d))

    def min_eigenvalue(self, y) -> np.ndarray:
        return np.linalg.eigvalsh(self.sample(y))[:, 0]

    @classmethod
    def from_text(cls, text: str, d: int = 2) -> "MatrixField":
        """'matrix(a11; a12; a22)' with each entry any scalar preset."""
        match = re.fullmatch(r'matrix\s*\((.*)\)', text.strip(), flags=re.S)
        if match is None:
            raise ConfigError(f"Expected matrix(a11; a12; a22), got '{text}'")
        parts = [p for p in match.group(1).split(';')]
        return cls([PeriodicField.from_text(p, d=d) for p in parts])


def coefficient_from_text(text: str, d: int = 1):
    if text.strip().startswith('matrix'):
        return MatrixField.from_text(text, d=d)
    return PeriodicField.from_text(text, d=d)


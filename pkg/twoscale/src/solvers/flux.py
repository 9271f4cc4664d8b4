import numpy as np
from dataclasses import dataclass


@dataclass(frozen=True)
class RegularizedFlux:
    """a (|g|^2 + delta^2)^((p-2)/2) g; equals a |g|^(p-2) g at delta = 0.

    ``a`` is a scalar field sampled at quadrature points (E, Q); for p = 2 a
    (E, Q, d, d) tensor is accepted as well.
    """
    p: float
    delta: float = 0.0

    def __post_init__(self):
        if self.p < 2:
            raise ValueError(f"Flux exponent must satisfy p >= 2, got {self.p}")
        if self.delta < 0:
            raise ValueError(f"Regularization must be >= 0, got {self.delta}")

    def _s(self, grad):
        return np.sum(grad * grad, axis=-1) + self.delta ** 2

    def weight(self, grad: np.ndarray) -> np.ndarray:
        if self.p == 2:
            return np.ones(grad.shape[:-1])
        return self._s(grad) ** ((self.p - 2.0) / 2.0)

    def flux(self, a: np.ndarray, grad: np.ndarray) -> np.ndarray:
        a = np.asarray(a)
        if a.ndim == grad.ndim + 1:
            if self.p != 2:
                raise ValueError("Matrix coefficients are supported only for p = 2")
            return np.einsum('...ij,...j->...i', a, grad)
        return (a * self.weight(grad))[..., None] * grad

    def tangent(self, a: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """d flux / d grad: a s^((p-2)/2) [I + (p-2) g g^T / s]."""
        a = np.asarray(a)
        d = grad.shape[-1]
        if a.ndim == grad.ndim + 1:
            if self.p != 2:
                raise ValueError("Matrix coefficients are supported only for p = 2")
            return np.broadcast_to(a, grad.shape + (d,)).copy()
        eye = np.eye(d)
        if self.p == 2:
            return a[..., None, None] * np.broadcast_to(eye, grad.shape[:-1] + (d, d))
        s = self._s(grad)
        w = s ** ((self.p - 2.0) / 2.0)
        outer = grad[..., :, None] * grad[..., None, :]
        with np.errstate(divide='ignore', invalid='ignore'):
            rank1 = np.where(s[..., None, None] > 0, outer / s[..., None, None], 0.0)
        return (a * w)[..., None, None] * (eye + (self.p - 2.0) * rank1)

    def frozen(self, a: np.ndarray, grad: np.ndarray, floor: float = 0.0) -> np.ndarray:
        """Picard coefficient a |g|^(p-2) with the gradient weight frozen.

        The weight is regularized with max(delta, floor), so a positive floor
        keeps the operator uniformly elliptic where g vanishes.
        """
        a = np.asarray(a)
        if a.ndim == grad.ndim + 1:
            return a
        if floor > self.delta:
            return a * RegularizedFlux(self.p, floor).weight(grad)
        return a * self.weight(grad)

    def energy_density(self, a: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """a / p (|g|^2 + delta^2)^(p/2), whose gradient in g is ``flux``."""
        return np.asarray(a) / self.p * self._s(grad) ** (self.p / 2.0)


def F(u: np.ndarray, p: float) -> np.ndarray:
    """|u|^(p-2) u."""
    u = np.asarray(u, dtype=float)
    if p == 2:
        return u.copy()
    return np.abs(u) ** (p - 2.0) * u


def F_prime(u: np.ndarray, p: float) -> np.ndarray:
    """(p-1) |u|^(p-2)."""
    u = np.asarray(u, dtype=float)
    if p == 2:
        return np.ones_like(u)
    return (p - 1.0) * np.abs(u) ** (p - 2.0)


def F_second(u: np.ndarray, p: float, delta: float = 0.0) -> np.ndarray:
    """(p-1)(p-2)(u^2 + delta^2)^((p-4)/2) u, exact away from u = 0."""
    u = np.asarray(u, dtype=float)
    if p == 2:
        return np.zeros_like(u)
    s = u * u + delta ** 2
    with np.errstate(divide='ignore', invalid='ignore'):
        out = (p - 1.0) * (p - 2.0) * s ** ((p - 4.0) / 2.0) * u
    return np.where(s > 0, out, 0.0)

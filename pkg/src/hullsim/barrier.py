"""Locally supported barrier and smoothed norm.

``P_s(x) = (x - s)^4 / x^5`` on ``(0, s)`` and exactly zero on ``[s, inf)``.
The clamp is C2 at ``x = s`` because the numerator carries a fourth-order
root there.  Arguments ``x <= 0`` lie outside the domain.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class BarrierDomainError(ValueError):
    """Raised when a barrier is evaluated at a non-positive argument."""


@dataclass(frozen=True)
class BarrierParams:
    """Support radius ``s`` and friction smoothing constant ``eps``."""

    s: float = 0.1
    eps: float = 1e-6

    def __post_init__(self):
        if not 0.0 < self.s < 1.0:
            raise ValueError(f"support radius s must lie in (0, 1), got {self.s}")
        if not self.eps > 0.0:
            raise ValueError(f"eps must be positive, got {self.eps}")

    @property
    def support_distance(self) -> float:
        """Hull distance beyond which the contact potential vanishes."""
        return 2.0 * self.s / (1.0 - self.s)


def _as_checked(x):
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0.0)):
        raise BarrierDomainError("barrier argument must be > 0")
    return arr


def barrier_terms(x, s: float):
    """Return ``(P, P', P'')`` elementwise.

    Raises :class:`BarrierDomainError` if any argument is ``<= 0``.
    """
    arr = _as_checked(x)
    inside = arr < s
    xi = np.where(inside, arr, 1.0)
    d = xi - s
    inv = 1.0 / xi
    inv5 = inv**5
    val = np.where(inside, d**4 * inv5, 0.0)
    grad = np.where(inside, d**3 * (5.0 * s - xi) * inv5 * inv, 0.0)
    hess = np.where(inside, 2.0 * d**2 * (xi * xi - 10.0 * s * xi + 15.0 * s * s) * inv5 * inv * inv, 0.0)
    if np.ndim(x) == 0:
        return float(val), float(grad), float(hess)
    return val, grad, hess


def barrier_value(x, s: float):
    return barrier_terms(x, s)[0]


def barrier_grad(x, s: float):
    return barrier_terms(x, s)[1]


def barrier_hess(x, s: float):
    return barrier_terms(x, s)[2]


def smooth_norm(v, eps: float) -> float:
    """``sqrt(|v|^2 + eps) - sqrt(eps)``; even, zero at the origin."""
    v = np.asarray(v, dtype=float)
    return float(np.sqrt(v @ v + eps) - np.sqrt(eps)) if v.ndim else float(np.sqrt(v * v + eps) - np.sqrt(eps))


def smooth_norm_grad(v, eps: float):
    v = np.asarray(v, dtype=float)
    return v / np.sqrt(np.sum(v * v) + eps)


def smooth_abs(a, eps: float):
    """Smoothed norm of a scalar magnitude, vectorised, with its derivative."""
    a = np.asarray(a, dtype=float)
    root = np.sqrt(a * a + eps)
    return root - np.sqrt(eps), a / root

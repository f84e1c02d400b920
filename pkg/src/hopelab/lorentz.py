"""Lorentz-group matrices: spatial rotations, boosts and 2x2 generators.

4x4 matrices act on ``(t, x, y, z)`` column vectors with metric
``diag(1, -1, -1, -1)``. The 2x2 generators are the building blocks of the
rotary encodings: a circular rotation (RoPE) or a hyperbolic boost (HoPE).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

__all__ = [
    "MINKOWSKI", "MAX_RAPIDITY", "Gen2", "boost_matrix", "rotation_matrix",
    "minkowski_interval", "preserves_metric", "gen2_matrix", "gen2_compose",
    "gen2_power", "damped_boost_norm",
]

MINKOWSKI = np.diag([1.0, -1.0, -1.0, -1.0])
# cosh overflows float64 just above 710
MAX_RAPIDITY = 700.0

_AXES = {"x": 1, "y": 2, "z": 3}


def _axis(axis: str) -> int:
    try:
        return _AXES[axis]
    except KeyError:
        raise ValueError(f"axis must be one of x, y, z; got {axis!r}") from None


def _check_rapidity(eta: float) -> float:
    eta = float(eta)
    if not np.isfinite(eta):
        raise ValueError("rapidity must be finite")
    if abs(eta) > MAX_RAPIDITY:
        raise OverflowError(f"|rapidity| {abs(eta)} exceeds cap {MAX_RAPIDITY}")
    return eta


def boost_matrix(axis: str, eta: float) -> np.ndarray:
    """Boost along ``axis`` with rapidity ``eta``.

    The time row/column and the boosted spatial axis mix through
    ``cosh``/``-sinh``; the other two spatial axes are untouched.
    """
    i = _axis(axis)
    eta = _check_rapidity(eta)
    m = np.eye(4)
    ch, sh = np.cosh(eta), np.sinh(eta)
    m[0, 0] = m[i, i] = ch
    m[0, i] = m[i, 0] = -sh
    return m


def rotation_matrix(axis: str, theta: float) -> np.ndarray:
    """Spatial rotation by ``theta`` about ``axis``; time is untouched."""
    theta = float(theta)
    if not np.isfinite(theta):
        raise ValueError("angle must be finite")
    c, s = np.cos(theta), np.sin(theta)
    m = np.eye(4)
    if axis == "x":
        m[2, 2], m[2, 3], m[3, 2], m[3, 3] = c, -s, s, c
    elif axis == "y":
        m[1, 1], m[1, 3], m[3, 1], m[3, 3] = c, s, -s, c
    elif axis == "z":
        m[1, 1], m[1, 2], m[2, 1], m[2, 2] = c, -s, s, c
    else:
        _axis(axis)
    return m


def minkowski_interval(v) -> float:
    """``t^2 - x^2 - y^2 - z^2``."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (4,):
        raise ValueError(f"expected a 4-vector, got shape {v.shape}")
    return float(v @ MINKOWSKI @ v)


def preserves_metric(lam: np.ndarray) -> float:
    """Max abs entry of ``lam.T @ eta @ lam - eta`` (zero for Lorentz matrices)."""
    return float(np.max(np.abs(lam.T @ MINKOWSKI @ lam - MINKOWSKI)))


@dataclass(frozen=True)
class Gen2:
    """One-parameter 2x2 generator: circular rotation or hyperbolic boost."""

    kind: Literal["rotation", "boost"]
    angle: float

    def __post_init__(self):
        if self.kind not in ("rotation", "boost"):
            raise ValueError(f"kind must be 'rotation' or 'boost', got {self.kind!r}")

    @property
    def matrix(self) -> np.ndarray:
        return gen2_matrix(self)


def gen2_matrix(g: Gen2) -> np.ndarray:
    a = g.angle
    if g.kind == "rotation":
        c, s = np.cos(a), np.sin(a)
        return np.array([[c, -s], [s, c]])
    _check_rapidity(a)
    ch, sh = np.cosh(a), np.sinh(a)
    return np.array([[ch, sh], [sh, ch]])


def gen2_compose(g1: Gen2, g2: Gen2) -> Gen2:
    """Group product of same-kind generators: angles add."""
    if g1.kind != g2.kind:
        raise ValueError(f"cannot compose {g1.kind} with {g2.kind}")
    return Gen2(g1.kind, g1.angle + g2.angle)


def gen2_power(g: Gen2, n: int) -> Gen2:
    return Gen2(g.kind, n * g.angle)


def damped_boost_norm(a: float, damp: float) -> float:
    """Spectral norm of ``exp(-damp) * B(a)``.

    ``B(a)`` is symmetric with eigenvalues ``exp(+-a)`` on ``(1, +-1)/sqrt(2)``,
    so for ``a >= 0`` the norm is ``exp(a - damp)``.
    """
    if a < 0 or damp < 0:
        raise ValueError("rapidity and damping must be non-negative")
    return float(np.exp(a - damp))

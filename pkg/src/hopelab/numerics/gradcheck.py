"""Central finite-difference checks against tape gradients."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import GradTape, Tensor, backward, checked

__all__ = ["grad_check", "numeric_grad", "relative_error"]


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-7) -> float:
    """Max over coordinates of ``|a-b| / max(|a|, |b|, floor)``."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def numeric_grad(f: Callable[[Tensor], Tensor | float], x: np.ndarray, eps: float,
                 coords=None) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x`` (optionally a coordinate subset)."""
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    out = np.zeros_like(flat)
    idx = range(flat.size) if coords is None else coords
    for i in idx:
        orig = flat[i]
        hi, lo = orig + eps, orig - eps     # divide by the step actually taken
        flat[i] = hi
        fp = _scalar(f(Tensor(x)))
        flat[i] = lo
        fm = _scalar(f(Tensor(x)))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value at coordinate {i}")
        out[i] = (fp - fm) / (hi - lo)
    return out.reshape(x.shape)


def _scalar(v) -> float:
    return float(v.item() if isinstance(v, Tensor) else v)


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5,
               floor: float = 1e-7) -> float:
    """Max relative error between tape and central-difference gradients.

    ``f`` maps a tensor to a scalar tensor built from recorded ops.
    """
    if not 0 < eps <= 1e-2:
        raise ValueError(f"eps must lie in (0, 1e-2], got {eps}")
    x = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    with checked(True):
        leaf = Tensor(x, requires_grad=True)
        with GradTape() as tape:
            y = f(leaf)
        if not np.isfinite(_scalar(y)):
            raise FloatingPointError("function value is not finite")
        if y._tape is tape:
            analytic = backward(tape, y, wrt=[leaf])[leaf]
        else:
            analytic = np.zeros_like(x)
        numeric = numeric_grad(f, x, eps)
    return relative_error(analytic, numeric, floor)

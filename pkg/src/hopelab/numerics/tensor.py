"""Dense tensors with a reverse-mode gradient tape.

Arrays are numpy-backed, row-major, float64 unless a caller opts into
float32. A :class:`GradTape` records every primitive whose inputs are
tracked while the tape is active; :func:`backward` replays the adjoints
in exact reverse recording order.

    >>> x = Tensor([1.0, 2.0], requires_grad=True)
    >>> with GradTape() as tape:
    ...     loss = (x * x).sum()
    >>> backward(tape, loss)[x]
    array([2., 4.])
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor", "GradTape", "ShapeError", "NonFiniteError", "TapeError",
    "backward", "checked", "is_checked", "no_record",
    "matmul", "add", "sub", "mul", "div", "neg", "exp", "log", "tanh",
    "sum", "mean", "reshape", "transpose", "concat", "take_rows",
    "softmax", "softmax_rows", "log_softmax", "masked_fill", "pair_mix",
    "gelu", "rms_norm", "cross_entropy", "scale_const",
]


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class TapeError(RuntimeError):
    pass


_CHECKED = True


def is_checked() -> bool:
    return _CHECKED


@contextlib.contextmanager
def checked(enabled: bool = True):
    """Toggle NaN/Inf assertions on tensor construction within a block."""
    global _CHECKED
    prev, _CHECKED = _CHECKED, enabled
    try:
        yield
    finally:
        _CHECKED = prev


class Tensor:
    """Immutable dense array, optionally a trainable leaf.

    ``requires_grad=True`` marks a leaf whose gradient ``backward`` reports.
    Outputs of recorded operations are tracked automatically.
    """

    __slots__ = ("data", "requires_grad", "_tape", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.array(data, dtype=dtype, copy=True)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        arr.setflags(write=False)
        if _CHECKED and not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite value in tensor of shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self._tape = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        arr.setflags(write=False)
        if _CHECKED and not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite value in tensor of shape {arr.shape}")
        t.data = arr
        t.requires_grad = False
        t._tape = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def tracked(self) -> bool:
        return self.requires_grad or self._tape is not None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self.shape)

    def __len__(self):
        return self.shape[0]

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=6)}{flag})"

    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return _getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def _raise_item(shape):
    raise ShapeError(f"item() needs a single-element tensor, got shape {shape}")


@dataclass(eq=False)
class _Record:
    out: Tensor
    parents: tuple
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass(eq=False)
class GradTape:
    """Ordered record of primitive operations on tracked tensors."""

    records: list = field(default_factory=list)
    leaves: list = field(default_factory=list)
    _leaf_ids: set = field(default_factory=set)

    def watch(self, *tensors: Tensor) -> None:
        for t in tensors:
            if not t.requires_grad:
                raise TapeError("only requires_grad leaves can be watched")
            if id(t) not in self._leaf_ids:
                self._leaf_ids.add(id(t))
                self.leaves.append(t)

    def __len__(self):
        return len(self.records)

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False


_TAPES: list[GradTape] = []
_PAUSED = [False]


@contextlib.contextmanager
def no_record():
    """Run operations without recording, even inside an active tape."""
    prev, _PAUSED[0] = _PAUSED[0], True
    try:
        yield
    finally:
        _PAUSED[0] = prev


def _as_tensor(x, dtype=np.float64) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor._wrap(np.array(x, dtype=dtype))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    # plain scalars/arrays adopt the tensor operand's dtype
    if isinstance(a, Tensor):
        return a, _as_tensor(b, a.dtype)
    return _as_tensor(a, b.dtype), b


def _emit(arr: np.ndarray, parents: tuple, vjp) -> Tensor:
    out = Tensor._wrap(arr)
    if not _TAPES or _PAUSED[0]:
        return out
    tape = _TAPES[-1]
    if not any(p.tracked for p in parents):
        return out
    for p in parents:
        if p.requires_grad and id(p) not in tape._leaf_ids:
            tape._leaf_ids.add(id(p))
            tape.leaves.append(p)
    out._tape = tape
    tape.records.append(_Record(out, parents, vjp))
    return out


def backward(tape: GradTape, loss: Tensor, wrt: Sequence[Tensor] | None = None) -> dict:
    """Gradients of a scalar ``loss`` for every leaf on ``tape``.

    Leaves that the loss does not depend on map to zeros. ``wrt`` restricts
    (or extends) the reported leaves.
    """
    if loss.data.size != 1:
        raise ShapeError(f"loss must be a scalar, got shape {loss.shape}")
    leaves = list(wrt) if wrt is not None else list(tape.leaves)
    watched = id(loss) in tape._leaf_ids or any(loss is leaf for leaf in leaves)
    if loss._tape is not tape and not (loss.requires_grad and watched):
        raise TapeError("loss was not produced on this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.out), None)
        if g is None:
            continue
        for p, pg in zip(rec.parents, rec.vjp(g)):
            if pg is None or not p.tracked:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg
    return {leaf: np.asarray(grads.get(id(leaf), np.zeros_like(leaf.data)), dtype=leaf.dtype)
            for leaf in leaves}


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.tracked else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.tracked else None
        return ga, gb

    return _emit(ad @ bd, (a, b), vjp)


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _emit(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _emit(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    return _emit(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape) if a.tracked else None,
                            _unbroadcast(g * ad, bd.shape) if b.tracked else None))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    return _emit(ad / bd, (a, b),
                 lambda g: (_unbroadcast(g / bd, ad.shape) if a.tracked else None,
                            _unbroadcast(-g * ad / (bd * bd), bd.shape) if b.tracked else None))


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _emit(-a.data, (a,), lambda g: (-g,))


def scale_const(a, c) -> Tensor:
    """Elementwise product with a constant array (never differentiated)."""
    a = _as_tensor(a)
    c = np.asarray(c, dtype=a.dtype)
    return _emit(a.data * c, (a,), lambda g: (_unbroadcast(g * c, a.shape),))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _emit(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    ad = a.data
    return _emit(np.log(ad), (a,), lambda g: (g / ad,))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)
    return _emit(out, (a,), lambda g: (g * (1.0 - out * out),))


def sum(a, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    a = _as_tensor(a)
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), vjp)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale_const(sum(a, axis, keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {old} to {tuple(shape)}") from exc
    return _emit(out, (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    inv = tuple(np.argsort(axes))
    return _emit(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def _getitem(a: Tensor, idx) -> Tensor:
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, idx, g)
        return (full,)

    return _emit(np.array(a.data[idx]), (a,), vjp)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    ts = tuple(_as_tensor(t) for t in tensors)
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _emit(np.concatenate([t.data for t in ts], axis=axis), ts,
                 lambda g: tuple(np.split(g, sizes, axis=axis)))


def take_rows(table: Tensor, ids) -> Tensor:
    """Embedding lookup: ``table[ids]`` with scatter-add adjoint."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"token id out of range for table of {table.shape[0]} rows")

    def vjp(g):
        full = np.zeros(table.shape, dtype=g.dtype)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (full,)

    return _emit(table.data[ids], (table,), vjp)


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return _emit(out, (a,),
                 lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def softmax_rows(t) -> Tensor:
    """Row-wise softmax of a rank-2 tensor with per-row max subtraction."""
    t = _as_tensor(t)
    if t.ndim != 2:
        raise ShapeError(f"softmax_rows expects rank 2, got shape {t.shape}")
    if t.shape[1] == 0:
        raise ShapeError("softmax_rows: empty row")
    return softmax(t, axis=-1)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _emit(out, (a,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def masked_fill(a, mask, value: float) -> Tensor:
    """Replace entries where ``mask`` is true with a constant."""
    a = _as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, np.asarray(value, dtype=a.dtype), a.data)
    return _emit(out, (a,), lambda g: (_unbroadcast(np.where(mask, 0.0, g), a.shape),))


def pair_mix(x, diag, cross) -> Tensor:
    """Apply independent 2x2 maps to consecutive coordinate pairs.

    For each pair ``(x0, x1)`` the output is
    ``(diag0*x0 + cross0*x1, cross1*x0 + diag1*x1)`` where ``diag`` and
    ``cross`` are constant arrays broadcastable to ``x``. Covers both
    circular rotations and damped hyperbolic boosts.
    """
    x = _as_tensor(x)
    if x.shape[-1] % 2:
        raise ShapeError(f"pair_mix needs an even last axis, got {x.shape}")
    diag = np.asarray(diag, dtype=x.dtype)
    cross = np.asarray(cross, dtype=x.dtype)

    def swap(v):
        s = v.reshape(v.shape[:-1] + (-1, 2))[..., ::-1]
        return s.reshape(v.shape)

    out = diag * x.data + cross * swap(x.data)
    return _emit(out, (x,), lambda g: (_unbroadcast(diag * g + swap(cross * g), x.shape),))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a) -> Tensor:
    """Tanh-approximated GELU."""
    a = _as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    th = np.tanh(inner)
    out = 0.5 * x * (1.0 + th)

    def vjp(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner),)

    return _emit(out, (a,), vjp)


def rms_norm(x, gain, eps: float = 1e-6) -> Tensor:
    """Root-mean-square normalization over the last axis, times ``gain``."""
    x, gain = _as_tensor(x), _as_tensor(gain)
    xd, gd = x.data, gain.data
    inv = 1.0 / np.sqrt((xd * xd).mean(axis=-1, keepdims=True) + eps)
    normed = xd * inv
    n = xd.shape[-1]

    def vjp(g):
        gg = _unbroadcast(g * normed, gd.shape) if gain.tracked else None
        gn = g * gd
        gx = inv * (gn - normed * (gn * normed).sum(axis=-1, keepdims=True) / n)
        return gx, gg

    return _emit(normed * gd, (x, gain), vjp)


def cross_entropy(logits, targets, mask=None) -> Tensor:
    """Mean next-token negative log likelihood over unmasked positions.

    ``logits`` has shape ``[..., V]``; ``targets`` and ``mask`` have the
    leading shape. Returns a scalar tensor.
    """
    logits = _as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise ShapeError(f"logits {logits.shape} do not match targets {targets.shape}")
    w = np.ones(targets.shape, dtype=logits.dtype) if mask is None else np.asarray(mask, dtype=logits.dtype)
    total = w.sum()
    if total <= 0:
        raise ValueError("cross_entropy: mask selects no positions")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    loss = -(picked * w).sum() / total

    def vjp(g):
        p = np.exp(logp)
        np.put_along_axis(p, targets[..., None],
                          np.take_along_axis(p, targets[..., None], axis=-1) - 1.0, axis=-1)
        return (g * p * (w / total)[..., None],)

    return _emit(np.asarray(loss, dtype=logits.dtype), (logits,), vjp)

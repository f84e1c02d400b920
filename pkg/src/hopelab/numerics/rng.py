"""Seeded, counter-based random streams.

The generator is Philox-4x64-10 (numpy's ``Philox`` bit generator). A
state is the pair ``(key, counter)``; each counter step yields one block
of four 64-bit words, so the stream is a pure function of the seed and
identical on every platform. Uniforms take the top 53 bits of a word;
normals use the Box-Muller transform on consecutive uniform pairs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor

__all__ = ["RngState", "Rng", "gaussian", "uniform", "raw_words", "derive_seed"]

_TWO53 = float(2 ** 53)


@dataclass(frozen=True)
class RngState:
    key: int
    counter: int = 0

    @classmethod
    def from_seed(cls, seed: int) -> "RngState":
        return cls(key=int(seed) % 2 ** 64, counter=0)


def raw_words(state: RngState, n: int) -> tuple[np.ndarray, RngState]:
    """``n`` raw 64-bit words; consumes whole blocks of four."""
    blocks = -(-n // 4)
    gen = np.random.Philox(key=state.key, counter=state.counter)
    words = gen.random_raw(4 * blocks)[:n]
    return words, RngState(state.key, state.counter + blocks)


def _unit_interval(words: np.ndarray) -> np.ndarray:
    # (0, 1]: never zero, so log() is safe in Box-Muller
    return ((words >> np.uint64(11)).astype(np.float64) + 1.0) / _TWO53


def uniform(state: RngState, n: int) -> tuple[np.ndarray, RngState]:
    words, state = raw_words(state, n)
    return _unit_interval(words), state


def gaussian(state: RngState, n: int) -> tuple[Tensor, RngState]:
    """``n`` standard-normal samples via Box-Muller."""
    if n < 1:
        raise ValueError(f"gaussian: n must be >= 1, got {n}")
    pairs = -(-n // 2)
    u, state = uniform(state, 2 * pairs)
    r = np.sqrt(-2.0 * np.log(u[0::2]))
    phi = 2.0 * np.pi * u[1::2]
    z = np.empty(2 * pairs)
    z[0::2] = r * np.cos(phi)
    z[1::2] = r * np.sin(phi)
    return Tensor(z[:n]), state


def derive_seed(seed: int, *path: int) -> int:
    """Deterministic substream key from a seed and an index path."""
    words, _ = raw_words(RngState.from_seed(seed), 4)
    acc = int(words[0])
    for p in path:
        w, _ = raw_words(RngState(acc ^ (int(p) * 0x9E3779B97F4A7C15 % 2 ** 64), 0), 1)
        acc = int(w[0])
    return acc


class Rng:
    """Mutable convenience wrapper threading an :class:`RngState`."""

    def __init__(self, seed: int | RngState):
        self.state = seed if isinstance(seed, RngState) else RngState.from_seed(seed)

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape))
        z, self.state = gaussian(self.state, max(n, 1))
        return (z.data[:n] * scale).reshape(shape)

    def uniform(self, shape) -> np.ndarray:
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape))
        u, self.state = uniform(self.state, max(n, 1))
        return u[:n].reshape(shape)

    def integers(self, low: int, high: int, shape) -> np.ndarray:
        """Uniform integers in ``[low, high)``."""
        u = self.uniform(shape)
        return np.minimum(low + np.floor(u * (high - low)).astype(np.int64), high - 1)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")

    def choice(self, values, k: int) -> np.ndarray:
        """``k`` distinct picks from ``values``."""
        values = np.asarray(values)
        return values[self.permutation(len(values))[:k]]

"""Synthetic sequence tasks and the plain-text dataset format.

A sequence is a concatenation of independent episodes. Token 0 is BOS and
token 1 is SEP; content tokens are ``2..vocab-1``.

copy episode (length ``2P + 2``)::

    BOS p_1 .. p_P SEP p_1 .. p_P          scored: the second p_1 .. p_P

recall episode (length ``2n + 4``)::

    BOS k_1 v_1 .. k_n v_n SEP k_q v_q     scored: v_q

``mask[t] == 1`` marks token ``t`` as a prediction target (predicted from
tokens ``< t``). Evaluating longer contexts stitches more episodes.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..numerics import Rng

__all__ = ["BOS", "SEP", "Dataset", "synth_task", "save_dataset", "load_dataset"]

BOS, SEP = 0, 1


@dataclass
class Dataset:
    tokens: np.ndarray      # [N, L] int64
    mask: np.ndarray        # [N, L] float64, 1 where the token is scored
    kind: str = "custom"
    vocab_size: int = 0

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        if self.mask is None:
            self.mask = np.ones(self.tokens.shape)
            self.mask[:, 0] = 0
        self.mask = np.asarray(self.mask, dtype=np.float64)
        if self.tokens.ndim != 2 or self.tokens.shape != self.mask.shape:
            raise ValueError(f"tokens {self.tokens.shape} and mask {self.mask.shape} must be equal 2-D shapes")
        if not self.vocab_size:
            self.vocab_size = int(self.tokens.max()) + 1 if self.tokens.size else 0

    def __len__(self):
        return self.tokens.shape[0]

    @property
    def seq_len(self) -> int:
        return self.tokens.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.tokens[idx], self.mask[idx], self.kind, self.vocab_size)


def _copy_episode(rng: Rng, n: int, length: int, vocab: int):
    p = (length - 2) // 2
    payload = rng.integers(2, vocab, (n, p))
    toks = np.concatenate([np.full((n, 1), BOS), payload, np.full((n, 1), SEP), payload], axis=1)
    mask = np.zeros(toks.shape)
    mask[:, p + 2:] = 1
    return toks, mask


def _recall_episode(rng: Rng, n: int, length: int, vocab: int):
    pairs = (length - 4) // 2
    content = np.arange(2, vocab)
    keys_pool, vals_pool = content[: len(content) // 2], content[len(content) // 2:]
    if pairs > len(keys_pool):
        raise ValueError(f"recall needs {pairs} distinct keys but vocab {vocab} offers {len(keys_pool)}")
    toks = np.empty((n, length), dtype=np.int64)
    for row in range(n):
        keys = rng.choice(keys_pool, pairs)
        vals = vals_pool[rng.integers(0, len(vals_pool), pairs)]
        q = int(rng.integers(0, pairs, 1)[0])
        body = np.empty(2 * pairs, dtype=np.int64)
        body[0::2], body[1::2] = keys, vals
        toks[row] = np.concatenate([[BOS], body, [SEP, keys[q], vals[q]]])
    mask = np.zeros(toks.shape)
    mask[:, -1] = 1
    return toks, mask


def synth_task(kind: str, seed: int, n_sequences: int, length: int, vocab: int,
               episode_len: int | None = None) -> Dataset:
    """Deterministic copy/recall dataset of ``n_sequences`` rows of ``length`` tokens.

    Each row holds ``length // episode_len`` independent episodes
    (``episode_len`` defaults to ``length``).
    """
    if length < 8 or vocab < 8:
        raise ValueError(f"synth_task needs length >= 8 and vocab >= 8, got {length}, {vocab}")
    episode_len = episode_len or length
    if length % episode_len or episode_len % 2 or episode_len < 8:
        raise ValueError(f"episode_len {episode_len} must be even, >= 8 and divide length {length}")
    make = {"copy": _copy_episode, "recall": _recall_episode}.get(kind)
    if make is None:
        raise ValueError(f"unknown task kind {kind!r}; expected 'copy' or 'recall'")
    rng = Rng(seed)
    reps = length // episode_len
    toks, masks = zip(*(make(rng, n_sequences, episode_len, vocab) for _ in range(reps)))
    return Dataset(np.concatenate(toks, axis=1), np.concatenate(masks, axis=1), kind, vocab)


def save_dataset(ds: Dataset, path) -> Path:
    """One sequence per line, space-separated token ids.

    The loss mask is written to a sibling ``<name>.mask`` file in the same
    layout (0/1 per token).
    """
    path = Path(path)
    path.write_text("".join(" ".join(map(str, row)) + "\n" for row in ds.tokens))
    path.with_suffix(path.suffix + ".mask").write_text(
        "".join(" ".join(str(int(v)) for v in row) + "\n" for row in ds.mask))
    return path


def load_dataset(path, vocab_size: int = 0) -> Dataset:
    path = Path(path)
    rows = [list(map(int, line.split())) for line in path.read_text().splitlines() if line.strip()]
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValueError(f"{path}: sequences must be non-empty and of equal length")
    mask_path = path.with_suffix(path.suffix + ".mask")
    mask = None
    if mask_path.exists():
        mask = np.array([list(map(float, line.split()))
                         for line in mask_path.read_text().splitlines() if line.strip()])
    return Dataset(np.array(rows), mask, "file", vocab_size)

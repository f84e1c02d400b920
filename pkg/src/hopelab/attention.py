"""Scaled dot-product and multi-head attention with pluggable encoders."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numerics as nx
from .encodings import (
    EncodingConfig, HopeEncoder, HopeOverflowError, PositionalEncoder, hope_pair_kernels,
    make_encoder,
)
from .numerics import Tensor

log = logging.getLogger(__name__)

__all__ = ["AttentionConfig", "attn_scores", "attn_forward", "multi_head_forward",
           "head_encoders", "causal_mask"]


@dataclass(frozen=True)
class AttentionConfig:
    n_heads: int = 12
    head_dim: int = 64
    causal: bool = True
    encoder: EncodingConfig = field(default_factory=EncodingConfig)

    def __post_init__(self):
        if self.n_heads < 1:
            raise ValueError(f"n_heads must be >= 1, got {self.n_heads}")
        if self.encoder.head_dim != self.head_dim:
            raise ValueError(
                f"encoder head_dim {self.encoder.head_dim} != attention head_dim {self.head_dim}")

    @property
    def model_dim(self) -> int:
        return self.n_heads * self.head_dim

    @property
    def scale(self) -> float:
        return 1.0 / math.sqrt(self.head_dim)


def head_encoders(config: AttentionConfig) -> list[PositionalEncoder]:
    return [make_encoder(config.encoder, h, config.n_heads) for h in range(config.n_heads)]


def causal_mask(length: int) -> np.ndarray:
    """True above the diagonal (key after query)."""
    return np.triu(np.ones((length, length), dtype=bool), k=1)


def _fused_hope(Q: Tensor, K: Tensor, enc: HopeEncoder, pos: np.ndarray, causal: bool) -> Tensor:
    # per-pair Gram matrices weighted by the damped cosh/sinh kernels of m - n
    L, d = Q.shape[-2], Q.shape[-1]
    lead = Q.shape[:-2]
    delta = pos[:, None] - pos[None, :]
    if causal:
        delta = np.maximum(delta, 0)
    ch, sh = hope_pair_kernels(enc.config, delta)          # [L, L, d/2]
    ch = np.moveaxis(ch, -1, 0)
    sh = np.moveaxis(sh, -1, 0)
    nd = len(lead)
    perm = tuple(range(nd)) + (nd + 1, nd, nd + 2)
    Qp = Q.reshape(lead + (L, d // 2, 2)).transpose(*perm)                   # [..., d/2, L, 2]
    Kp = K.reshape(lead + (L, d // 2, 2)).transpose(*perm)
    Ks = nx.pair_mix(K, 0.0, 1.0).reshape(lead + (L, d // 2, 2)).transpose(*perm)
    kT = tuple(range(nd + 1)) + (nd + 2, nd + 1)
    same = Qp @ Kp.transpose(*kT)
    cross = Qp @ Ks.transpose(*kT)
    total = nx.scale_const(same, ch) + nx.scale_const(cross, sh)
    return total.sum(axis=-3)


def attn_scores(Q, K, encoder: PositionalEncoder | Sequence[PositionalEncoder],
                causal: bool = True, positions=None, path: str | None = None) -> Tensor:
    """Scaled raw logits ``[..., L, L]`` with positional transforms and biases.

    ``encoder`` may be a list of per-head encoders aligned with axis ``-3``
    of ``Q``/``K`` (they must share one config; only biases differ).
    Entries with key after query are set to the most negative finite float
    when ``causal``. ``path`` overrides the HoPE score path.
    """
    Q, K = nx.tensor._as_tensor(Q), nx.tensor._as_tensor(K)
    if Q.shape[-1] != K.shape[-1] or Q.shape[-2] != K.shape[-2]:
        raise nx.ShapeError(f"attention shape mismatch: Q {Q.shape}, K {K.shape}")
    encoders = list(encoder) if isinstance(encoder, (list, tuple)) else [encoder]
    enc = encoders[0]
    L, d = Q.shape[-2], Q.shape[-1]
    if d != enc.head_dim:
        raise nx.ShapeError(f"vectors have dim {d}, encoder expects {enc.head_dim}")
    pos = np.arange(L) if positions is None else np.asarray(positions)
    if L > enc.config.max_position:
        raise ValueError(f"sequence length {L} exceeds max_position {enc.config.max_position}")
    scale = 1.0 / math.sqrt(d)

    path = path or enc.config.score_path
    scores = None
    if isinstance(enc, HopeEncoder) and path == "factored":
        try:
            qc = enc.query_coefficients(pos)
            kc = enc.key_coefficients(pos)
        except HopeOverflowError:
            log.info("factored HoPE path out of range at length %d; using fused scores", L)
            path = "fused"
        else:
            tq, tk = nx.pair_mix(Q, *qc), nx.pair_mix(K, *kc)
            scores = tq @ tk.transpose(*range(K.ndim - 2), K.ndim - 1, K.ndim - 2)
    if scores is None and isinstance(enc, HopeEncoder):
        scores = _fused_hope(Q, K, enc, pos, causal)
    elif scores is None:
        qc, kc = enc.query_coefficients(pos), enc.key_coefficients(pos)
        tq = Q if qc is None else nx.pair_mix(Q, *qc)
        tk = K if kc is None else nx.pair_mix(K, *kc)
        scores = tq @ tk.transpose(*range(K.ndim - 2), K.ndim - 1, K.ndim - 2)
    scores = nx.scale_const(scores, scale)

    biases = [e.bias_matrix(L, causal) for e in encoders]
    if biases[0] is not None:
        bias = np.stack(biases) if len(biases) > 1 else biases[0]
        scores = scores + bias.astype(scores.dtype)
    if causal:
        scores = nx.masked_fill(scores, causal_mask(L), np.finfo(scores.dtype).min)
    return scores


def attn_forward(Q, K, V, encoder, causal: bool = True, positions=None,
                 path: str | None = None) -> Tensor:
    """``softmax(scores) @ V``; differentiable through the tape."""
    scores = attn_scores(Q, K, encoder, causal, positions, path)
    return nx.softmax(scores, axis=-1) @ nx.tensor._as_tensor(V)


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    lead, (L, D) = x.shape[:-2], x.shape[-2:]
    nd = len(lead)
    return x.reshape(lead + (L, n_heads, D // n_heads)).transpose(
        *range(nd), nd + 1, nd, nd + 2)


def _merge_heads(x: Tensor) -> Tensor:
    lead, (H, L, hd) = x.shape[:-3], x.shape[-3:]
    nd = len(lead)
    return x.transpose(*range(nd), nd + 1, nd, nd + 2).reshape(lead + (L, H * hd))


def multi_head_forward(x, params: dict, config: AttentionConfig, encoders=None,
                       positions=None) -> Tensor:
    """Project to heads, attend per head, concatenate, project out.

    ``params`` holds ``wq``, ``wk``, ``wv``, ``wo`` as ``[D, D]`` tensors
    (``x @ w`` convention).
    """
    x = nx.tensor._as_tensor(x)
    D = x.shape[-1]
    if D != config.model_dim:
        raise nx.ShapeError(f"input width {D} != n_heads*head_dim = {config.model_dim}")
    encoders = encoders or head_encoders(config)
    q = _split_heads(x @ params["wq"], config.n_heads)
    k = _split_heads(x @ params["wk"], config.n_heads)
    v = _split_heads(x @ params["wv"], config.n_heads)
    heads = attn_forward(q, k, v, encoders, config.causal, positions)
    return _merge_heads(heads) @ params["wo"]

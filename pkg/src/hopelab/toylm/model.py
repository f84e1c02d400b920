"""Pre-norm decoder-only transformer on the tape engine.

Block: ``x + attn(rms(x))`` then ``x + ffn(rms(x))`` with a GELU feed-forward.
Initialization (seeded): every matrix is ``N(0, 1/fan_in)``; the attention
output and second FFN matrices are further scaled by ``1/sqrt(2*layers)``;
the embedding is ``N(0, 1)``; norm gains start at 1 and biases at 0.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import numerics as nx
from ..attention import AttentionConfig, head_encoders, multi_head_forward
from ..encodings import EncodingConfig
from ..numerics import Rng, Tensor

__all__ = ["ModelConfig", "ToyLM", "build_model", "forward", "param_count", "expected_param_count"]


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 2
    n_heads: int = 2
    head_dim: int = 16
    ffn_dim: int = 128
    vocab_size: int = 32
    train_len: int = 64
    encoder: EncodingConfig = field(default_factory=lambda: EncodingConfig(head_dim=16))
    tied_embeddings: bool = False

    def __post_init__(self):
        if self.encoder.head_dim != self.head_dim:
            raise ValueError(f"encoder head_dim {self.encoder.head_dim} != model head_dim {self.head_dim}")
        for name in ("layers", "n_heads", "ffn_dim", "vocab_size", "train_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def model_dim(self) -> int:
        return self.n_heads * self.head_dim

    @property
    def attention(self) -> AttentionConfig:
        return AttentionConfig(self.n_heads, self.head_dim, True, self.encoder)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["encoder"] = EncodingConfig.from_dict(d["encoder"])
        return cls(**d)


@dataclass
class ToyLM:
    config: ModelConfig
    params: dict[str, Tensor]

    def __post_init__(self):
        att = self.config.attention
        self.encoders = head_encoders(att)

    def block_params(self, i: int) -> dict[str, Tensor]:
        pre = f"blocks.{i}."
        return {k[len(pre):]: v for k, v in self.params.items() if k.startswith(pre)}

    def numpy_params(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def with_params(self, arrays: dict[str, np.ndarray], dtype=None) -> "ToyLM":
        return ToyLM(self.config, {k: Tensor(arrays[k], requires_grad=True,
                                             dtype=dtype or arrays[k].dtype)
                                   for k in self.params})

    def astype(self, dtype) -> "ToyLM":
        return self.with_params(self.numpy_params(), dtype)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype


def expected_param_count(c: ModelConfig) -> int:
    """``V*D + layers*(4*D^2 + 2*D*F + F + 3*D) + D + (0 if tied else D*V)``."""
    D, F, V = c.model_dim, c.ffn_dim, c.vocab_size
    per_block = 4 * D * D + 2 * D * F + F + 3 * D
    return V * D + c.layers * per_block + D + (0 if c.tied_embeddings else D * V)


def param_count(model: ToyLM) -> int:
    return int(sum(v.data.size for v in model.params.values()))


def build_model(config: ModelConfig, seed: int, dtype=np.float64) -> ToyLM:
    rng = Rng(seed)
    D, F, V = config.model_dim, config.ffn_dim, config.vocab_size
    out_scale = 1.0 / math.sqrt(2 * config.layers)

    def mat(rows, cols, scale=1.0):
        return rng.normal((rows, cols), scale / math.sqrt(rows))

    arrays = {"embed": rng.normal((V, D))}
    for i in range(config.layers):
        p = f"blocks.{i}."
        arrays[p + "norm1"] = np.ones(D)
        arrays[p + "wq"] = mat(D, D)
        arrays[p + "wk"] = mat(D, D)
        arrays[p + "wv"] = mat(D, D)
        arrays[p + "wo"] = mat(D, D, out_scale)
        arrays[p + "norm2"] = np.ones(D)
        arrays[p + "w1"] = mat(D, F)
        arrays[p + "b1"] = np.zeros(F)
        arrays[p + "w2"] = mat(F, D, out_scale)
        arrays[p + "b2"] = np.zeros(D)
    arrays["norm_f"] = np.ones(D)
    if not config.tied_embeddings:
        arrays["head"] = mat(D, V)
    return ToyLM(config, {k: Tensor(v, requires_grad=True, dtype=dtype) for k, v in arrays.items()})


def forward(model: ToyLM, tokens) -> Tensor:
    """Logits ``[B, L, V]`` for integer ``tokens`` of shape ``[B, L]``."""
    c = model.config
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim == 1:
        tokens = tokens[None]
    L = tokens.shape[1]
    if L > c.encoder.max_position:
        raise ValueError(f"sequence length {L} exceeds max_position {c.encoder.max_position}")
    P = model.params
    x = nx.take_rows(P["embed"], tokens)
    absolute = model.encoders[0].absolute_embedding(np.arange(L), c.model_dim)
    if absolute is not None:
        x = x + absolute.astype(x.dtype)
    att = c.attention
    for i in range(c.layers):
        bp = model.block_params(i)
        h = nx.rms_norm(x, bp["norm1"])
        x = x + multi_head_forward(h, bp, att, model.encoders)
        h = nx.rms_norm(x, bp["norm2"])
        x = x + (nx.gelu(h @ bp["w1"] + bp["b1"]) @ bp["w2"] + bp["b2"])
    x = nx.rms_norm(x, P["norm_f"])
    head = P["head"] if "head" in P else P["embed"].T
    return x @ head

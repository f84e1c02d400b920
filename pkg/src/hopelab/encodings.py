"""Positional encoders behind one interface.

Every encoder exposes ``transform_query(x, m)``, ``transform_key(x, n)`` and
``score_bias(m, n)``; the raw attention logit between a query at ``m`` and a
key at ``n`` is ``<transform_query(q, m), transform_key(k, n)> + score_bias``.

Rotary-style encoders act on consecutive coordinate pairs ``(2i, 2i+1)``
with per-pair frequency ``theta_i = freq_scale * base**(-2i/d)``. HoPE uses
a damped hyperbolic boost per pair::

    query at m:  exp(-m*theta') * [[cosh, sinh], [sinh, cosh]](m*theta_i)
    key at n:    exp(+n*theta') * [[cosh, -sinh], [-sinh, cosh]](n*theta_i)

so the logit only depends on ``m - n`` and decays like
``exp(-(m-n)*(theta' - theta_i))``.
"""
from __future__ import annotations

import json
import math
from dataclasses import InitVar, asdict, dataclass, fields
from pathlib import Path
from typing import Literal

import numpy as np

from .lorentz import MAX_RAPIDITY, Gen2, gen2_matrix
from .numerics import Rng

__all__ = [
    "VARIANTS", "ConfigError", "HopeOverflowError", "DiscriminationError",
    "EncodingConfig", "FrequencySchedule", "frequency_schedule",
    "PositionalEncoder", "HopeEncoder", "RopeEncoder", "AlibiEncoder",
    "SinusoidalEncoder", "NopeEncoder", "make_encoder", "alibi_slopes",
    "hope_transform_query", "hope_transform_key", "hope_score_fused",
    "hope_algorithm1", "rope_transform", "alibi_bias", "sinusoidal_embedding",
    "generator_block_matrix", "generator_transform", "discrimination_construct_key",
    "DEFAULT_HOPE_SCALE", "DEFAULT_DAMPING_RATIO",
]

VARIANTS = ("hope", "rope", "alibi", "sinusoidal", "nope")
DEFAULT_HOPE_SCALE = 0.01
DEFAULT_DAMPING_RATIO = 1.1


class ConfigError(ValueError):
    pass


class HopeOverflowError(OverflowError):
    """Factored HoPE transform out of range; use the fused score path."""


class DiscriminationError(RuntimeError):
    pass


@dataclass(frozen=True)
class EncodingConfig:
    """Encoder hyperparameters.

    ``freq_scale`` defaults to 0.01 for HoPE and 1 otherwise; ``theta_prime``
    defaults to ``1.1 * max(theta_i)`` for HoPE and 0 otherwise. Pass
    ``validate=False`` to build configs that break the HoPE damping
    constraint (used by the property runner to report boundary cases).
    """

    head_dim: int = 64
    base_wavelength: float = 10000.0
    freq_scale: float | None = None
    theta_prime: float | None = None
    variant: Literal["hope", "rope", "alibi", "sinusoidal", "nope"] = "hope"
    max_position: int = 8192
    score_path: Literal["factored", "fused"] = "factored"
    validate: InitVar[bool] = True

    def __post_init__(self, validate: bool):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.freq_scale is None:
            object.__setattr__(self, "freq_scale",
                               DEFAULT_HOPE_SCALE if self.variant == "hope" else 1.0)
        if self.theta_prime is None:
            tp = DEFAULT_DAMPING_RATIO * self.freq_scale if self.variant == "hope" else 0.0
            object.__setattr__(self, "theta_prime", tp)
        object.__setattr__(self, "freq_scale", float(self.freq_scale))
        object.__setattr__(self, "theta_prime", float(self.theta_prime))
        object.__setattr__(self, "base_wavelength", float(self.base_wavelength))
        if not isinstance(self.head_dim, int) or self.head_dim < 2 or self.head_dim % 2:
            raise ConfigError(f"head_dim must be an even integer >= 2, got {self.head_dim}")
        if not self.base_wavelength > 1.0:
            raise ConfigError(f"base_wavelength must exceed 1, got {self.base_wavelength}")
        if not self.freq_scale > 0:
            raise ConfigError(f"freq_scale must be positive, got {self.freq_scale}")
        if self.theta_prime < 0:
            raise ConfigError(f"theta_prime must be non-negative, got {self.theta_prime}")
        if self.max_position < 1:
            raise ConfigError(f"max_position must be >= 1, got {self.max_position}")
        if self.score_path not in ("factored", "fused"):
            raise ConfigError(f"score_path must be 'factored' or 'fused', got {self.score_path!r}")
        if validate and self.variant == "hope" and not self.theta_prime > self.max_theta:
            raise ConfigError(
                f"hope requires theta_prime > max theta_i: theta_prime={self.theta_prime!r} "
                f"<= max theta_i={self.max_theta!r}")

    @property
    def max_theta(self) -> float:
        # schedule is decreasing, so the first pair is fastest
        return self.freq_scale

    @property
    def decays(self) -> bool:
        return self.theta_prime > self.max_theta

    def replace(self, validate: bool = True, **changes) -> "EncodingConfig":
        d = self.to_dict()
        d.update(changes)
        return EncodingConfig(**d, validate=validate)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict, validate: bool = True) -> "EncodingConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown EncodingConfig fields: {', '.join(unknown)}")
        return cls(**d, validate=validate)

    @classmethod
    def from_json(cls, text: str, validate: bool = True) -> "EncodingConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config JSON must be an object")
        return cls.from_dict(d, validate=validate)

    @classmethod
    def load(cls, path, validate: bool = True) -> "EncodingConfig":
        return cls.from_json(Path(path).read_text(), validate=validate)


@dataclass(frozen=True)
class FrequencySchedule:
    thetas: tuple[float, ...]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.thetas, dtype=dtype)

    def __len__(self):
        return len(self.thetas)


def _thetas(config: EncodingConfig) -> np.ndarray:
    d = config.head_dim
    i = np.arange(d // 2)
    return config.freq_scale * config.base_wavelength ** (-2.0 * i / d)


def frequency_schedule(config: EncodingConfig) -> FrequencySchedule:
    """``theta_i = freq_scale * base**(-2i/d)`` for ``i = 0 .. d/2 - 1``."""
    return FrequencySchedule(tuple(float(t) for t in _thetas(config)))


def _pairs(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return x[..., 0::2], x[..., 1::2]


def _interleave(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.empty(a.shape[:-1] + (2 * a.shape[-1],), dtype=np.result_type(a, b))
    out[..., 0::2] = a
    out[..., 1::2] = b
    return out


def _pos(p) -> np.ndarray:
    return np.asarray(p, dtype=np.float64)[..., None]


# ---------------------------------------------------------------- HoPE

def _check_factored(config: EncodingConfig, pos) -> None:
    p = float(np.max(np.abs(pos))) if np.size(pos) else 0.0
    # key coefficients grow like exp(n * (theta' + theta_i))
    if p * (config.theta_prime + config.max_theta) > MAX_RAPIDITY:
        raise HopeOverflowError(
            f"factored HoPE transform overflows at position {p:g}; use the fused score path")


def hope_coefficients(config: EncodingConfig, pos, role: str) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate ``(diag, cross)`` multipliers of the damped boost.

    Shape ``pos.shape + (d,)``; ``role`` is ``"query"`` or ``"key"``.
    """
    _check_factored(config, pos)
    ang = _pos(pos) * _thetas(config)
    if role == "query":
        scale = np.exp(-_pos(pos) * config.theta_prime)
        sign = 1.0
    elif role == "key":
        scale = np.exp(_pos(pos) * config.theta_prime)
        sign = -1.0
    else:
        raise ValueError(f"role must be 'query' or 'key', got {role!r}")
    ch = scale * np.cosh(ang)
    sh = sign * scale * np.sinh(ang)
    return _interleave(ch, ch), _interleave(sh, sh)


def _apply_pairs(x, diag, cross) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    x0, x1 = _pairs(x)
    d0, d1 = _pairs(diag)
    c0, c1 = _pairs(cross)
    return _interleave(d0 * x0 + c0 * x1, c1 * x0 + d1 * x1)


def hope_transform_query(x, m, config: EncodingConfig) -> np.ndarray:
    """``exp(-m*theta') * B(theta_i, m)`` applied pairwise."""
    return _apply_pairs(x, *hope_coefficients(config, m, "query"))


def hope_transform_key(x, n, config: EncodingConfig) -> np.ndarray:
    """``exp(+n*theta') * B(theta_i, -n)`` applied pairwise."""
    return _apply_pairs(x, *hope_coefficients(config, n, "key"))


def hope_pair_kernels(config: EncodingConfig, delta) -> tuple[np.ndarray, np.ndarray]:
    """Damped ``cosh``/``sinh`` weights per pair at offset ``delta = m - n``.

    Evaluated as combined exponentials so nothing overflows while
    ``theta' > theta_i``. Shape ``delta.shape + (d/2,)``.
    """
    dl = _pos(delta)
    th = _thetas(config)
    grow = np.exp(dl * (th - config.theta_prime))
    shrink = np.exp(-dl * (th + config.theta_prime))
    return 0.5 * (grow + shrink), 0.5 * (grow - shrink)


def hope_score_fused(q, k, delta, config: EncodingConfig):
    """Raw HoPE logit ``<f_q(q, m), f_k(k, n)>`` as a function of ``m - n``.

    ``q`` and ``k`` have shape ``[..., d]``; ``delta`` may be an array, in
    which case the result broadcasts as ``delta.shape``.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    q0, q1 = _pairs(q)
    k0, k1 = _pairs(k)
    same = q0 * k0 + q1 * k1
    cross = q0 * k1 + q1 * k0
    ch, sh = hope_pair_kernels(config, delta)
    out = (same * ch + cross * sh).sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def hope_algorithm1(q, k, pos, theta, theta_prime):
    """Literal loop over even coordinates, one position for ``q`` and ``k``."""
    q = np.array(q, dtype=np.float64)
    k = np.array(k, dtype=np.float64)
    dim = q.shape[-1]
    for i in range(0, dim - 1, 2):
        angle = pos * theta[i // 2]
        c, s = math.cosh(angle), math.sinh(angle)
        rot_q = [c * q[..., i] + s * q[..., i + 1], s * q[..., i] + c * q[..., i + 1]]
        rot_k = [c * k[..., i] - s * k[..., i + 1], -s * k[..., i] + c * k[..., i + 1]]
        q[..., i], q[..., i + 1] = (math.exp(-pos * theta_prime) * v for v in rot_q)
        k[..., i], k[..., i + 1] = (math.exp(pos * theta_prime) * v for v in rot_k)
    return q, k


# ---------------------------------------------------- unified generators

def generator_block_matrix(pos: float, thetas, kind: str, theta_prime: float = 0.0,
                           role: str = "query") -> np.ndarray:
    """Dense block-diagonal ``d x d`` map built from :func:`gen2_matrix`.

    The query map is ``exp(-pos*theta') * G(pos*theta_i)`` per block; the key
    map is its inverse transpose. With boosts this is HoPE; with rotations
    and ``theta' = 0`` both maps coincide and give RoPE.
    """
    thetas = np.asarray(thetas, dtype=np.float64)
    d = 2 * len(thetas)
    out = np.zeros((d, d))
    if role not in ("query", "key"):
        raise ValueError(f"role must be 'query' or 'key', got {role!r}")
    for i, th in enumerate(thetas):
        if role == "query":
            block = math.exp(-pos * theta_prime) * gen2_matrix(Gen2(kind, pos * th))
        else:
            # (c G(a))^-T = G(-a)^T / c for both generator kinds
            block = math.exp(pos * theta_prime) * gen2_matrix(Gen2(kind, -pos * th)).T
        out[2 * i:2 * i + 2, 2 * i:2 * i + 2] = block
    return out


def generator_transform(x, pos: float, thetas, kind: str, theta_prime: float = 0.0,
                        role: str = "query") -> np.ndarray:
    return generator_block_matrix(pos, thetas, kind, theta_prime, role) @ np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------- RoPE

def rope_coefficients(config: EncodingConfig, pos) -> tuple[np.ndarray, np.ndarray]:
    ang = _pos(pos) * _thetas(config)
    c, s = np.cos(ang), np.sin(ang)
    return _interleave(c, c), _interleave(-s, s)


def rope_transform(x, pos, config: EncodingConfig) -> np.ndarray:
    """Rotate pair ``i`` by ``pos * theta_i``; norms are preserved."""
    return _apply_pairs(x, *rope_coefficients(config, pos))


# --------------------------------------------------- ALiBi / sinusoidal

def alibi_slopes(n_heads: int) -> np.ndarray:
    """Geometric slopes ``2**(-8h/H)`` for heads ``h = 1..H``."""
    if n_heads < 1:
        raise ValueError("n_heads must be >= 1")
    return 2.0 ** (-8.0 * np.arange(1, n_heads + 1) / n_heads)


def alibi_bias(slope: float, m: int, n: int) -> float:
    """Causal linear penalty ``-slope * (m - n)``."""
    if m < n:
        raise ValueError(f"alibi bias is causal: query position {m} precedes key position {n}")
    return -slope * (m - n)


def sinusoidal_embedding(pos, d: int, base: float = 10000.0) -> np.ndarray:
    """Interleaved ``(sin, cos)`` of ``pos * base**(-2i/d)``."""
    if d % 2:
        raise ValueError(f"sinusoidal embedding needs even d, got {d}")
    freqs = base ** (-2.0 * np.arange(d // 2) / d)
    ang = _pos(pos) * freqs
    return _interleave(np.sin(ang), np.cos(ang))


# ------------------------------------------------------------- encoders

class PositionalEncoder:
    """Identity encoder; subclasses override the hooks they need."""

    variant = "nope"
    relative = False

    def __init__(self, config: EncodingConfig):
        self.config = config

    def __repr__(self):
        return f"{type(self).__name__}({self.config!r})"

    @property
    def head_dim(self) -> int:
        return self.config.head_dim

    def query_coefficients(self, pos):
        """``(diag, cross)`` for :func:`pair_mix`, or ``None`` for identity."""
        return None

    def key_coefficients(self, pos):
        return None

    def transform_query(self, x, m) -> np.ndarray:
        coef = self.query_coefficients(m)
        return np.asarray(x, dtype=np.float64) if coef is None else _apply_pairs(x, *coef)

    def transform_key(self, x, n) -> np.ndarray:
        coef = self.key_coefficients(n)
        return np.asarray(x, dtype=np.float64) if coef is None else _apply_pairs(x, *coef)

    def score_bias(self, m, n) -> float:
        return 0.0

    def bias_matrix(self, length: int, causal: bool = True) -> np.ndarray | None:
        return None

    def absolute_embedding(self, positions, dim: int) -> np.ndarray | None:
        return None

    def score(self, q, k, m, n) -> float:
        """Raw (unscaled) logit between a query at ``m`` and a key at ``n``."""
        tq = self.transform_query(q, m)
        tk = self.transform_key(k, n)
        return float(np.dot(tq, tk)) + self.score_bias(m, n)

    def score_at(self, q, k, delta, scale: float = 1.0) -> np.ndarray:
        """Logits for a query at ``delta`` and a key at 0, vectorized over ``delta``.

        ``scale`` multiplies the dot-product term only, not the bias.
        """
        delta = np.atleast_1d(np.asarray(delta))
        tq = self.transform_query(np.broadcast_to(q, delta.shape + (len(q),)), delta)
        tk = self.transform_key(k, 0)
        bias = np.array([self.score_bias(int(d), 0) for d in delta])
        return scale * (tq @ tk) + bias


class NopeEncoder(PositionalEncoder):
    variant = "nope"


class RopeEncoder(PositionalEncoder):
    variant = "rope"
    relative = True

    def query_coefficients(self, pos):
        return rope_coefficients(self.config, pos)

    key_coefficients = query_coefficients


class HopeEncoder(PositionalEncoder):
    variant = "hope"
    relative = True

    def query_coefficients(self, pos):
        return hope_coefficients(self.config, pos, "query")

    def key_coefficients(self, pos):
        return hope_coefficients(self.config, pos, "key")

    def score(self, q, k, m, n) -> float:
        if self.config.score_path == "fused":
            return hope_score_fused(q, k, m - n, self.config)
        try:
            return super().score(q, k, m, n)
        except HopeOverflowError:
            return hope_score_fused(q, k, m - n, self.config)

    def score_at(self, q, k, delta, scale: float = 1.0) -> np.ndarray:
        return scale * np.atleast_1d(hope_score_fused(q, k, np.atleast_1d(delta), self.config))


class AlibiEncoder(PositionalEncoder):
    variant = "alibi"

    def __init__(self, config: EncodingConfig, slope: float | None = None):
        super().__init__(config)
        self.slope = float(alibi_slopes(1)[0] if slope is None else slope)
        if self.slope <= 0:
            raise ConfigError(f"alibi slope must be positive, got {self.slope}")

    def __repr__(self):
        return f"AlibiEncoder({self.config!r}, slope={self.slope!r})"

    def score_bias(self, m, n) -> float:
        return alibi_bias(self.slope, m, n)

    def bias_matrix(self, length: int, causal: bool = True) -> np.ndarray:
        pos = np.arange(length)
        dist = pos[:, None] - pos[None, :]
        return -self.slope * (np.maximum(dist, 0) if causal else np.abs(dist))


class SinusoidalEncoder(PositionalEncoder):
    variant = "sinusoidal"

    def absolute_embedding(self, positions, dim: int) -> np.ndarray:
        return sinusoidal_embedding(positions, dim, self.config.base_wavelength)


def make_encoder(config: EncodingConfig, head: int = 0, n_heads: int = 1,
                 slope: float | None = None) -> PositionalEncoder:
    """Encoder for ``config``; ALiBi takes the slope of ``head`` of ``n_heads``."""
    if config.variant == "alibi":
        if slope is None:
            slope = float(alibi_slopes(n_heads)[head])
        return AlibiEncoder(config, slope)
    cls = {"hope": HopeEncoder, "rope": RopeEncoder, "sinusoidal": SinusoidalEncoder,
           "nope": NopeEncoder}[config.variant]
    return cls(config)


# ------------------------------------------------- discrimination keys

def _window_scores(q, k, window, config) -> np.ndarray:
    lo, hi = window
    return hope_score_fused(q, k, np.arange(lo, hi + 1), config)


def _verifies(q, k, r, window, config) -> bool:
    s = _window_scores(q, k, window, config)
    lo = window[0]
    best = int(np.argmax(s))
    if best + lo != r:
        return False
    # argmax must be strict, not a tie
    others = np.delete(s, best)
    return bool(others.size == 0 or s[best] > others.max())


def _eigen_key(q, r, config) -> np.ndarray:
    """Key whose per-pair score curve peaks exactly at offset ``r``.

    Per pair, with ``u = (1,1)/sqrt2`` and ``w = (1,-1)/sqrt2`` the score is
    ``A exp(-alpha s) + C exp(-beta s)`` where ``A = q_u k_u``,
    ``C = q_w k_w``, ``alpha = theta' - theta_i``, ``beta = theta' + theta_i``.
    Choosing ``C/A = -(alpha/beta) exp(2 theta_i r)`` puts the unique
    continuous maximum at ``s = r``; a sum of such curves peaks there too.
    """
    q = np.asarray(q, dtype=np.float64)
    th = _thetas(config)
    tp = config.theta_prime
    q0, q1 = _pairs(q)
    qu = (q0 + q1) / math.sqrt(2)
    qw = (q0 - q1) / math.sqrt(2)
    alpha, beta = tp - th, tp + th
    ku = np.where(qu >= 0, 1.0, -1.0)
    # ratio of |C| to A, expressed through k_w
    ratio = (alpha / beta) * np.exp(2 * th * r)
    with np.errstate(divide="ignore", invalid="ignore"):
        kw = -np.sign(qw) * ratio * np.abs(qu) / np.abs(qw)
    kw = np.where(np.isfinite(kw), kw, 0.0)
    k0 = (ku + kw) / math.sqrt(2)
    k1 = (ku - kw) / math.sqrt(2)
    return _interleave(k0, k1)


def discrimination_construct_key(q, r: int, config: EncodingConfig,
                                 window: tuple[int, int] = (0, 64), budget: int = 2000,
                                 seed: int = 0) -> np.ndarray:
    """A key whose HoPE logit against ``q`` peaks at offset ``r`` in ``window``.

    Candidates, in order: ``k`` aligned with the transformed query at
    offset ``r``; the closed-form per-pair construction of
    :func:`_eigen_key`; then random perturbations of the best candidate
    until ``budget`` runs out. Every candidate is verified by brute-force
    argmax over the window; no unverified key is ever returned.
    """
    if config.variant != "hope":
        raise ConfigError(f"discrimination keys need variant 'hope', got {config.variant!r}")
    if not config.decays:
        raise ConfigError("discrimination keys need theta_prime > max theta_i")
    lo, hi = window
    if not lo <= r <= hi:
        raise ValueError(f"target offset {r} outside window [{lo}, {hi}]")
    q = np.asarray(q, dtype=np.float64)
    # e^{-r theta'} B(theta, r) q, the key maximizing the logit at r for its norm
    ch, sh = hope_pair_kernels(config, r)
    q0, q1 = _pairs(q)
    aligned = _interleave(ch * q0 + sh * q1, sh * q0 + ch * q1)
    candidates = [aligned, _eigen_key(q, r, config)]
    for k in candidates:
        if _verifies(q, k, r, window, config):
            return k
    rng = Rng(seed)
    base = candidates[1]
    scale = 1e-3 * (np.linalg.norm(base) or 1.0)
    for _ in range(budget):
        k = base + rng.normal(base.shape, scale)
        if _verifies(q, k, r, window, config):
            return k
    raise DiscriminationError(
        f"no key with argmax at offset {r} found within budget {budget}")

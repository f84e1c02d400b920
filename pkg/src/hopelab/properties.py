"""Cross-module invariant checks with measured error against tolerance.

Each check returns a :class:`PropertyResult`; :func:`run_all` evaluates the
whole suite for one HoPE config (RoPE checks use the same head dimension).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import lorentz
from .encodings import (
    EncodingConfig, RopeEncoder, HopeEncoder, frequency_schedule, generator_block_matrix,
    hope_algorithm1, hope_score_fused, hope_transform_key, hope_transform_query,
    rope_transform,
)
from .numerics import Rng

__all__ = ["PropertyResult", "shift_invariance", "decay_bound", "rope_special_case",
           "path_equivalence", "lorentz_group_laws", "boost_norm_bound", "run_all"]


@dataclass
class PropertyResult:
    name: str
    measured: float | None
    tolerance: float
    passed: bool
    applicable: bool = True
    detail: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PropertyResult":
        return cls(**d)


def _result(name, err, tol, detail=""):
    return PropertyResult(name, float(err), tol, bool(err <= tol), True, detail)


def shift_invariance(config: EncodingConfig, variant: str, n: int = 200, max_pos: int = 512,
                     max_shift: int = 256, seed: int = 0, tol: float = 1e-10) -> PropertyResult:
    """``score(m, n) == score(m+t, n+t)`` for random vectors and positions."""
    cfg = config.replace(variant=variant, validate=False, theta_prime=None
                         if variant == "rope" else config.theta_prime,
                         freq_scale=None if variant == "rope" else config.freq_scale)
    enc = RopeEncoder(cfg) if variant == "rope" else HopeEncoder(cfg)
    rng = Rng(seed)
    d = cfg.head_dim
    worst = 0.0
    for _ in range(n):
        q, k = rng.normal(d), rng.normal(d)
        m, nn = (int(v) for v in rng.integers(0, max_pos - max_shift + 1, 2))
        t = int(rng.integers(0, max_shift + 1, 1)[0])
        a, b = enc.score(q, k, m, nn), enc.score(q, k, m + t, nn + t)
        worst = max(worst, abs(a - b) / max(1.0, abs(a)))
    return _result(f"shift_invariance[{variant}]", worst, tol,
                   "max |s(m,n) - s(m+t,n+t)| / max(1, |s|)")


def decay_bound(config: EncodingConfig, max_delta: int = 2000, n: int = 50, seed: int = 0,
                tol: float = 1e-12, eq_tol: float = 1e-9) -> PropertyResult:
    """Two-dimensional HoPE logit never exceeds ``|q||k| exp(-delta (theta' - theta))``."""
    cfg = config.replace(head_dim=2, validate=False)
    name = "decay_bound"
    if not cfg.decays:
        return PropertyResult(name, None, tol, True, False,
                              "not applicable: requires theta_prime > max theta_i")
    rng = Rng(seed)
    delta = np.arange(max_delta + 1)
    env = np.exp(-delta * (cfg.theta_prime - cfg.max_theta))
    excess = -np.inf
    for _ in range(n):
        q, k = rng.normal(2), rng.normal(2)
        s = hope_score_fused(q, k, delta, cfg)
        excess = max(excess, float(np.max(np.abs(s) - np.linalg.norm(q) * np.linalg.norm(k) * env)))
    u = np.array([1.0, 1.0]) / math.sqrt(2)
    eq_err = float(np.max(np.abs(hope_score_fused(u, u, delta, cfg) - env)))
    ok = excess <= tol and eq_err <= eq_tol
    return PropertyResult(name, max(excess, 0.0), tol, ok, True,
                          f"tight on (1,1)/sqrt2 within {eq_err:.2e}")


def rope_special_case(config: EncodingConfig, n: int = 100, max_pos: int = 4096, seed: int = 0,
                      tol: float = 1e-12) -> PropertyResult:
    """Rotation generators with zero damping reproduce RoPE."""
    cfg = EncodingConfig(head_dim=config.head_dim, base_wavelength=config.base_wavelength,
                         variant="rope")
    thetas = np.asarray(frequency_schedule(cfg))
    rng = Rng(seed)
    worst = 0.0
    for _ in range(n):
        x = rng.normal(cfg.head_dim)
        pos = int(rng.integers(0, max_pos + 1, 1)[0])
        for role in ("query", "key"):
            unified = generator_block_matrix(pos, thetas, "rotation", 0.0, role) @ x
            worst = max(worst, float(np.max(np.abs(unified - rope_transform(x, pos, cfg)))))
    return _result("rope_special_case", worst, tol)


def path_equivalence(config: EncodingConfig, dims=(2, 16, 64), n: int = 30, seed: int = 0,
                     tol: float = 1e-9) -> PropertyResult:
    """Algorithm-1 loop, block-diagonal matrices and fused scores agree.

    Positions are drawn with ``|pos * theta'| <= 20``. The measured value is
    the largest pairwise score difference relative to ``max(1, |score|)``.
    """
    rng = Rng(seed)
    worst = 0.0
    for d in dims:
        cfg = config.replace(head_dim=d, validate=False)
        thetas = np.asarray(frequency_schedule(cfg))
        limit = int(20 / cfg.theta_prime) if cfg.theta_prime > 0 else 1000
        for _ in range(n):
            q, k = rng.normal(d), rng.normal(d)
            m, nn = (int(v) for v in rng.integers(0, limit + 1, 2))
            aq, _ = hope_algorithm1(q, q, m, thetas, cfg.theta_prime)
            _, ak = hope_algorithm1(k, k, nn, thetas, cfg.theta_prime)
            s_alg = float(aq @ ak)
            mq = generator_block_matrix(m, thetas, "boost", cfg.theta_prime, "query") @ q
            mk = generator_block_matrix(nn, thetas, "boost", cfg.theta_prime, "key") @ k
            s_mat = float(mq @ mk)
            s_fac = float(hope_transform_query(q, m, cfg) @ hope_transform_key(k, nn, cfg))
            s_fus = hope_score_fused(q, k, m - nn, cfg)
            vals = [s_alg, s_mat, s_fac, s_fus]
            scale = max(1.0, max(abs(v) for v in vals))
            worst = max(worst, (max(vals) - min(vals)) / scale)
    return _result("path_equivalence", worst, tol, "algorithm1 / block matrix / factored / fused")


def lorentz_group_laws(n: int = 100, seed: int = 0, tol: float = 1e-12) -> PropertyResult:
    """Metric preservation and additivity of rapidities and angles."""
    rng = Rng(seed)
    worst = 0.0
    for _ in range(n):
        a, b = rng.uniform(2) * 4 - 2
        ang = float(rng.uniform(1)[0] * 2 * math.pi)
        for ax in "xyz":
            for lam in (lorentz.boost_matrix(ax, a), lorentz.rotation_matrix(ax, ang)):
                worst = max(worst, lorentz.preserves_metric(lam) / max(1.0, float(np.max(np.abs(lam))) ** 2))
            prod = lorentz.boost_matrix(ax, a) @ lorentz.boost_matrix(ax, b)
            worst = max(worst, float(np.max(np.abs(prod - lorentz.boost_matrix(ax, a + b))))
                        / max(1.0, float(np.max(np.abs(prod)))))
        g = lorentz.gen2_compose(lorentz.Gen2("boost", a), lorentz.Gen2("boost", b))
        prod2 = lorentz.Gen2("boost", a).matrix @ lorentz.Gen2("boost", b).matrix
        worst = max(worst, float(np.max(np.abs(g.matrix - prod2))) / max(1.0, float(np.max(prod2))))
    return _result("lorentz_group_laws", worst, tol, "metric, boost and generator composition")


def boost_norm_bound(theta: float = 0.7, n: int = 10_000, seed: int = 0,
                     tol: float = 1e-12) -> PropertyResult:
    """``|B(theta) v| / |v| <= exp(theta)`` over random ``v``."""
    rng = Rng(seed)
    v = rng.normal((n, 2))
    B = lorentz.gen2_matrix(lorentz.Gen2("boost", theta))
    ratio = np.linalg.norm(v @ B.T, axis=1) / np.linalg.norm(v, axis=1)
    excess = float(np.max(ratio) - math.exp(theta))
    return PropertyResult("boost_norm_bound", max(excess, 0.0), tol, excess <= tol, True,
                          f"max ratio {np.max(ratio):.12g} vs e^theta {math.exp(theta):.12g}")


def run_all(config: EncodingConfig | None = None, seed: int = 0) -> list[PropertyResult]:
    config = config or EncodingConfig(head_dim=64)
    return [
        shift_invariance(config, "rope", seed=seed),
        shift_invariance(config, "hope", seed=seed),
        decay_bound(config, seed=seed),
        rope_special_case(config, seed=seed),
        path_equivalence(config, seed=seed),
        lorentz_group_laws(seed=seed),
        boost_norm_bound(seed=seed),
    ]

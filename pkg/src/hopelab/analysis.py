"""Attention-logit decay curves and their CSV export.

Curves are pre-softmax logits ``<f_q(q, delta), f_k(k, 0)>/sqrt(d) + bias``
on the integer grid ``delta = 0..max_dist``. The canonical fixed-vector
curve uses ``q = k = ones(64)``.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encodings import AlibiEncoder, PositionalEncoder
from .numerics import Rng, derive_seed

__all__ = ["DecayCurve", "decay_curve_fixed", "decay_curve_gaussian", "gaussian_pair",
           "gaussian_curves", "oscillation_index", "export_csv", "read_csv", "default_filename",
           "envelope_bound"]


@dataclass
class DecayCurve:
    distances: np.ndarray
    scores: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.distances = np.asarray(self.distances, dtype=np.int64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.distances.shape != self.scores.shape or self.distances.ndim != 1:
            raise ValueError("distances and scores must be 1-D with equal length")
        if self.distances.size == 0:
            raise ValueError("a decay curve needs at least one point")
        if np.any(np.diff(self.distances) <= 0):
            raise ValueError("distances must be strictly increasing")

    def __len__(self):
        return len(self.distances)

    def beyond(self, min_distance: int) -> "DecayCurve":
        keep = self.distances >= min_distance
        return DecayCurve(self.distances[keep], self.scores[keep], dict(self.meta))


def _meta(encoder: PositionalEncoder, mode: str, max_dist: int, **extra) -> dict:
    meta = {"variant": encoder.variant, "mode": mode, "max_dist": int(max_dist),
            "config": encoder.config.to_dict()}
    if isinstance(encoder, AlibiEncoder):
        meta["alibi_slope"] = encoder.slope
    meta.update(extra)
    return meta


def _curve(encoder: PositionalEncoder, q, k, max_dist: int) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    return encoder.score_at(q, k, np.arange(max_dist + 1), scale=1.0 / math.sqrt(q.shape[-1]))


def decay_curve_fixed(q, k, encoder: PositionalEncoder, max_dist: int) -> DecayCurve:
    """Logit with the query at ``delta`` and the key at 0, for each ``delta``."""
    if max_dist < 1:
        raise ValueError(f"max_dist must be >= 1, got {max_dist}")
    return DecayCurve(np.arange(max_dist + 1), _curve(encoder, q, k, max_dist),
                      _meta(encoder, "fixed", max_dist))


def gaussian_pair(seed: int, index: int, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Standard-normal ``(q, k)`` for sample ``index`` from its own substream."""
    rng = Rng(derive_seed(seed, index))
    return rng.normal(d), rng.normal(d)


def gaussian_curves(encoder: PositionalEncoder, n_samples: int, seed: int,
                    max_dist: int) -> np.ndarray:
    """Per-sample curves, shape ``[n_samples, max_dist + 1]``, in sample order."""
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    d = encoder.head_dim
    return np.stack([_curve(encoder, *gaussian_pair(seed, i, d), max_dist)
                     for i in range(n_samples)])


def decay_curve_gaussian(encoder: PositionalEncoder, n_samples: int, seed: int,
                         max_dist: int) -> DecayCurve:
    """Mean curve over independent standard-normal ``(q, k)`` pairs."""
    if max_dist < 1:
        raise ValueError(f"max_dist must be >= 1, got {max_dist}")
    curves = gaussian_curves(encoder, n_samples, seed, max_dist)
    return DecayCurve(np.arange(max_dist + 1), curves.mean(axis=0),
                      _meta(encoder, "gaussian", max_dist, n_samples=int(n_samples),
                            seed=int(seed)))


def envelope_bound(q, k, encoder: PositionalEncoder, max_dist: int) -> np.ndarray:
    """``|q||k| exp(-delta (theta' - max theta_i)) / sqrt(d)`` for HoPE."""
    cfg = encoder.config
    q, k = np.asarray(q, float), np.asarray(k, float)
    delta = np.arange(max_dist + 1)
    return (np.linalg.norm(q) * np.linalg.norm(k)
            * np.exp(-delta * (cfg.theta_prime - cfg.max_theta)) / math.sqrt(q.size))


def oscillation_index(curve: DecayCurve | np.ndarray) -> float:
    """Fraction of consecutive triples where ``|score|`` changes direction.

    0 for a monotone curve, 1 when every step reverses the previous one.
    """
    s = np.abs(np.asarray(curve.scores if isinstance(curve, DecayCurve) else curve, float))
    if s.size < 3:
        raise ValueError(f"oscillation index needs at least 3 points, got {s.size}")
    d = np.diff(s)
    flips = np.count_nonzero(d[:-1] * d[1:] < 0)
    return flips / (s.size - 2)


def default_filename(curve: DecayCurve) -> str:
    return f"{curve.meta.get('variant', 'curve')}_{curve.meta.get('mode', 'fixed')}_{int(curve.distances[-1])}.csv"


def _format(curve: DecayCurve) -> str:
    buf = io.StringIO()
    for key in sorted(curve.meta):
        buf.write(f"# {key}: {json.dumps(curve.meta[key], sort_keys=True)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["distance", "score"])
    for dist, score in zip(curve.distances, curve.scores):
        w.writerow([int(dist), f"{score:.17g}"])
    return buf.getvalue()


def export_csv(curve: DecayCurve, destination) -> Path:
    """Write ``distance,score`` rows with 17 significant digits.

    Metadata goes first as ``# key: json`` comment lines. A directory
    destination gets the default ``{variant}_{mode}_{max_dist}.csv`` name.
    """
    path = Path(destination)
    if path.is_dir():
        path = path / default_filename(curve)
    try:
        with open(path, "w", newline="") as fh:
            fh.write(_format(curve))
    except OSError as exc:
        raise OSError(f"cannot write decay curve to {path}: {exc.strerror or exc}") from exc
    return path


def read_csv(path) -> DecayCurve:
    meta, rows = {}, []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition(": ")
                meta[key] = json.loads(value)
            elif line.strip() and not line.startswith("distance"):
                dist, score = line.strip().split(",")
                rows.append((int(dist), float(score)))
    dists, scores = zip(*rows)
    return DecayCurve(np.array(dists), np.array(scores), meta)


def env_output_dir(default: str = ".") -> Path:
    return Path(os.environ.get("HOPELAB_OUT", default))

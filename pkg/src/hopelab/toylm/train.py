"""AdamW training loop for :mod:`hopelab.toylm.model`."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import numerics as nx
from ..numerics import GradTape, Rng, backward
from .data import Dataset
from .model import ToyLM, forward

log = logging.getLogger(__name__)

__all__ = ["TrainRecipe", "TrainResult", "TrainingDiverged", "AdamW", "loss_fn", "train"]


@dataclass(frozen=True)
class TrainRecipe:
    """Optimizer settings; dropout is always zero and the lr is constant.

    ``precision`` selects the float width of parameters and activations.
    """

    batch_size: int = 16
    total_steps: int = 2000
    weight_decay: float = 0.01
    learning_rate: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.98)
    eps: float = 1e-8
    grad_clip: float | None = 1.0
    seed: int = 0
    precision: str = "float32"
    optimizer: str = field(default="adamw", init=False)

    def __post_init__(self):
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"precision must be float32 or float64, got {self.precision!r}")
        if self.batch_size < 1 or self.total_steps < 0:
            raise ValueError("batch_size must be >= 1 and total_steps >= 0")

    @property
    def dtype(self):
        return np.dtype(self.precision)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainRecipe":
        d = {k: v for k, v in d.items() if k != "optimizer"}
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


class TrainingDiverged(FloatingPointError):
    def __init__(self, step: int, trace: list[float]):
        super().__init__(f"loss became non-finite at step {step}")
        self.step = step
        self.trace = trace


class AdamW:
    """Adam with decoupled weight decay on matrices (ndim >= 2) only."""

    def __init__(self, params: dict, lr, betas=(0.9, 0.98), eps=1e-8, weight_decay=0.01):
        self.lr, self.betas, self.eps, self.wd = lr, betas, eps, weight_decay
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> dict:
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        out = {}
        for k, p in params.items():
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            update = (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            w = p.data
            if w.ndim >= 2:
                w = w - self.lr * self.wd * w
            out[k] = (w - self.lr * update).astype(p.dtype)
        return out


def loss_fn(model: ToyLM, tokens: np.ndarray, mask: np.ndarray):
    """Masked next-token cross entropy: logits at ``t`` predict token ``t+1``."""
    logits = forward(model, tokens[:, :-1])
    return nx.cross_entropy(logits, tokens[:, 1:], mask[:, 1:])


@dataclass
class TrainResult:
    model: ToyLM
    losses: list[float]

    @property
    def final_loss(self) -> float:
        tail = self.losses[-min(50, len(self.losses)):]
        return float(np.mean(tail)) if tail else float("nan")


def _clip(grads: dict, max_norm: float | None) -> dict:
    if not max_norm:
        return grads
    total = np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        return {k: g * scale for k, g in grads.items()}
    return grads


def train(model: ToyLM, dataset: Dataset, recipe: TrainRecipe, log_every: int = 0) -> TrainResult:
    """Minimize masked cross entropy; the loss of every step is recorded.

    Batches are drawn with replacement from ``dataset`` by a stream seeded
    with ``recipe.seed``. Raises :class:`TrainingDiverged` on a non-finite loss.
    """
    if dataset.seq_len != model.config.train_len:
        raise ValueError(f"dataset sequences have length {dataset.seq_len}, "
                         f"model train_len is {model.config.train_len}")
    model = model.astype(recipe.dtype)
    opt = AdamW(model.params, recipe.learning_rate, recipe.betas, recipe.eps, recipe.weight_decay)
    rng = Rng(nx.derive_seed(recipe.seed, 1))
    losses: list[float] = []
    with nx.checked(False):
        for step in range(recipe.total_steps):
            idx = rng.integers(0, len(dataset), recipe.batch_size)
            with GradTape() as tape:
                loss = loss_fn(model, dataset.tokens[idx], dataset.mask[idx])
            value = float(loss.item())
            losses.append(value)
            if not np.isfinite(value):
                raise TrainingDiverged(step, losses)
            grads = backward(tape, loss, wrt=list(model.params.values()))
            grads = _clip({k: grads[p] for k, p in model.params.items()}, recipe.grad_clip)
            model = model.with_params(opt.step(model.params, grads))
            if log_every and (step + 1) % log_every == 0:
                log.info("step %d loss %.4f", step + 1, value)
    return TrainResult(model, losses)

"""Length-extrapolation evaluation and multi-seed comparison reports."""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import numerics as nx
from ..encodings import EncodingConfig
from ..numerics import no_record
from .data import Dataset, synth_task
from .model import ModelConfig, ToyLM, build_model, forward
from .train import TrainRecipe, train

__all__ = ["EvalReport", "eval_perplexity", "ExtrapolationReport", "TaskSpec",
           "run_single", "extrapolation_report", "variant_label", "DEFAULT_MULTIPLIERS"]

DEFAULT_MULTIPLIERS = (1, 2, 3, 4, 5, 6)


@dataclass
class EvalReport:
    lengths: list[int]
    nll: list[float]
    ppl: list[float]
    tokens: list[int] = field(default_factory=list)

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.lengths, self.lengths[1:])):
            raise ValueError("lengths must be strictly increasing")

    def to_dict(self) -> dict:
        return {"lengths": list(self.lengths), "nll": list(self.nll), "ppl": list(self.ppl),
                "tokens": list(self.tokens)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["length", "nll", "ppl", "tokens"])
        for row in zip(self.lengths, self.nll, self.ppl, self.tokens):
            w.writerow([row[0], f"{row[1]:.17g}", f"{row[2]:.17g}", row[3]])
        return buf.getvalue()


def _window_nll(model: ToyLM, tokens: np.ndarray, mask: np.ndarray, batch: int = 16):
    total, count = 0.0, 0.0
    for start in range(0, len(tokens), batch):
        t, m = tokens[start:start + batch], mask[start:start + batch, 1:]
        logits = forward(model, t[:, :-1]).data.astype(np.float64)
        z = logits - logits.max(axis=-1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
        picked = np.take_along_axis(logp, t[:, 1:, None], axis=-1)[..., 0]
        total -= float((picked * m).sum())
        count += float(m.sum())
    return total, count


def eval_perplexity(model: ToyLM, dataset: Dataset, lengths: Sequence[int]) -> EvalReport:
    """Perplexity per context length over non-overlapping windows.

    Each sequence is cut into ``len // L`` disjoint windows of ``L`` tokens;
    only masked targets inside a window count, each predicted from that
    window's own prefix.
    """
    lengths = sorted(int(L) for L in lengths)
    if lengths[-1] > dataset.seq_len:
        raise ValueError(f"eval sequences have {dataset.seq_len} tokens; need {lengths[-1]}")
    if lengths[-1] > model.config.encoder.max_position:
        raise ValueError(f"length {lengths[-1]} exceeds max_position {model.config.encoder.max_position}")
    nlls, ppls, counts = [], [], []
    with no_record(), nx.checked(False):
        for L in lengths:
            n = dataset.seq_len // L
            toks = dataset.tokens[:, :n * L].reshape(-1, L)
            mask = dataset.mask[:, :n * L].reshape(-1, L)
            total, count = _window_nll(model, toks, mask)
            if count == 0:
                raise ValueError(f"no scored tokens in windows of length {L}")
            nlls.append(total / count)
            ppls.append(float(np.exp(total / count)))
            counts.append(int(count))
    return EvalReport(lengths, nlls, ppls, counts)


@dataclass(frozen=True)
class TaskSpec:
    """Synthetic task and data sizes for a train/eval run."""

    kind: str = "copy"
    n_train: int = 8192
    n_eval: int = 64
    episode_len: int | None = None     # None: one training length per episode
    data_seed: int = 1234

    def train_data(self, mc: ModelConfig, seed: int) -> Dataset:
        return synth_task(self.kind, nx.derive_seed(self.data_seed, seed, 0), self.n_train,
                          mc.train_len, mc.vocab_size, self.episode_len)

    def eval_data(self, mc: ModelConfig, seed: int, max_len: int) -> Dataset:
        return synth_task(self.kind, nx.derive_seed(self.data_seed, seed, 1), self.n_eval,
                          max_len, mc.vocab_size, self.episode_len or mc.train_len)


def variant_label(configs: Sequence[EncodingConfig]) -> list[str]:
    labels, seen = [], {}
    for c in configs:
        seen[c.variant] = seen.get(c.variant, 0) + 1
    counter = {}
    for c in configs:
        if seen[c.variant] == 1:
            labels.append(c.variant)
        else:
            counter[c.variant] = counter.get(c.variant, 0) + 1
            labels.append(f"{c.variant}#{counter[c.variant]}")
    return labels


def run_single(model_config: ModelConfig, recipe: TrainRecipe, task: TaskSpec,
               multipliers: Sequence[int] = DEFAULT_MULTIPLIERS):
    """Train one model and evaluate it; returns ``(TrainResult, EvalReport)``."""
    lengths = [m * model_config.train_len for m in multipliers]
    model = build_model(model_config, recipe.seed)
    result = train(model, task.train_data(model_config, recipe.seed), recipe)
    report = eval_perplexity(result.model, task.eval_data(model_config, recipe.seed, max(lengths)),
                             lengths)
    return result, report


def _job(args):
    mc, recipe, task, multipliers = args
    result, report = run_single(mc, recipe, task, multipliers)
    return result.losses, report


@dataclass
class ExtrapolationReport:
    labels: list[str]
    lengths: list[int]
    seeds: list[int]
    ppl: np.ndarray                      # [variants, seeds, lengths]
    configs: list[dict] = field(default_factory=list)
    final_losses: np.ndarray | None = None   # [variants, seeds]

    @property
    def mean(self) -> np.ndarray:
        return self.ppl.mean(axis=1)

    @property
    def std(self) -> np.ndarray | None:
        return self.ppl.std(axis=1, ddof=1) if len(self.seeds) > 1 else None

    def growth(self, num: int, den: int) -> np.ndarray:
        """Per-run ``ppl[num] / ppl[den]`` for lengths ``num`` and ``den``; ``[variants, seeds]``."""
        i, j = self.lengths.index(num), self.lengths.index(den)
        return self.ppl[:, :, i] / self.ppl[:, :, j]

    def to_dict(self) -> dict:
        std = self.std
        return {
            "lengths": self.lengths, "seeds": self.seeds,
            "rows": [{"variant": lab, "config": cfg, "mean_ppl": self.mean[v].tolist(),
                      "std_ppl": None if std is None else std[v].tolist(),
                      "per_seed_ppl": self.ppl[v].tolist(),
                      "final_train_loss": None if self.final_losses is None
                      else self.final_losses[v].tolist()}
                     for v, (lab, cfg) in enumerate(zip(self.labels, self.configs))],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["variant"] + [str(L) for L in self.lengths]
        std = self.std
        if std is not None:
            header += [f"{L}_std" for L in self.lengths]
        w.writerow(header)
        for v, lab in enumerate(self.labels):
            row = [lab] + [f"{x:.17g}" for x in self.mean[v]]
            if std is not None:
                row += [f"{x:.17g}" for x in std[v]]
            w.writerow(row)
        return buf.getvalue()

    def write(self, directory, stem: str = "extrapolation") -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        c, j = directory / f"{stem}.csv", directory / f"{stem}.json"
        c.write_text(self.to_csv())
        j.write_text(self.to_json())
        return c, j


def extrapolation_report(configs: Sequence[EncodingConfig], recipe: TrainRecipe,
                         task: TaskSpec, seeds: Sequence[int],
                         model_config: ModelConfig | None = None,
                         multipliers: Sequence[int] = DEFAULT_MULTIPLIERS,
                         jobs: int = 1) -> ExtrapolationReport:
    """Train every (config, seed) pair and tabulate perplexity vs length.

    Rows follow the order of ``configs``. Runs are independent; ``jobs > 1``
    fans them out over processes with results merged in input order.
    """
    if not configs:
        raise ValueError("need at least one encoding config")
    base = model_config or ModelConfig()
    runs = []
    for cfg in configs:
        mc = replace(base, encoder=cfg, head_dim=cfg.head_dim)
        for s in seeds:
            runs.append((mc, replace(recipe, seed=int(s)), task, tuple(multipliers)))
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            out = list(pool.map(_job, runs))
    else:
        out = [_job(r) for r in runs]
    nv, ns = len(configs), len(seeds)
    ppl = np.array([rep.ppl for _, rep in out]).reshape(nv, ns, -1)
    finals = np.array([float(np.mean(l[-50:])) if l else np.nan for l, _ in out]).reshape(nv, ns)
    lengths = out[0][1].lengths
    return ExtrapolationReport(variant_label(configs), lengths, [int(s) for s in seeds], ppl,
                               [c.to_dict() for c in configs], finals)

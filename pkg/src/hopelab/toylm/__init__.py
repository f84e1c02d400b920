"""Tiny decoder-only language model for train-short/test-long experiments."""
from .checkpoint import ModelFileError, load_model, save_model
from .data import BOS, SEP, Dataset, load_dataset, save_dataset, synth_task
from .evaluate import (
    DEFAULT_MULTIPLIERS, EvalReport, ExtrapolationReport, TaskSpec, eval_perplexity,
    extrapolation_report, run_single,
)
from .model import ModelConfig, ToyLM, build_model, expected_param_count, forward, param_count
from .train import AdamW, TrainRecipe, TrainResult, TrainingDiverged, loss_fn, train

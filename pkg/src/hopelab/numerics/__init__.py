"""Tensor arithmetic, reverse-mode gradients, seeded RNG and gradient checks."""
from .gradcheck import grad_check, numeric_grad, relative_error
from .rng import Rng, RngState, derive_seed, gaussian, raw_words, uniform
from .tensor import *  # noqa: F401,F403
from .tensor import __all__ as _tensor_all

__all__ = list(_tensor_all) + [
    "grad_check", "numeric_grad", "relative_error",
    "Rng", "RngState", "derive_seed", "gaussian", "raw_words", "uniform",
]

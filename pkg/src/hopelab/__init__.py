"""Positional-encoding lab: hyperbolic rotary encodings next to RoPE, ALiBi,
sinusoidal and no-position baselines, with decay analysis, invariant checks
and a desk-scale train-short/test-long language model."""
__version__ = "0.1.0"

from .encodings import (  # noqa: E402
    ConfigError, EncodingConfig, HopeOverflowError, make_encoder,
)

__all__ = ["__version__", "ConfigError", "EncodingConfig", "HopeOverflowError", "make_encoder"]

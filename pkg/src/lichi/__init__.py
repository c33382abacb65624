"""Unsupervised image denoising by iterated linear combinations of similar patches."""

from lichi.iteration import (
    LichiConfig,
    default_config,
    estimate_t,
    lichi_denoise,
    repeat_internal_adaptation,
    step_weights,
)
from lichi.pilot import PilotConfig, default_pilot_config, pilot_denoise, sigma_band
from lichi.weights import Pilot, PilotMethod

__all__ = [
    "LichiConfig",
    "Pilot",
    "PilotConfig",
    "PilotMethod",
    "default_config",
    "default_pilot_config",
    "estimate_t",
    "lichi_denoise",
    "pilot_denoise",
    "repeat_internal_adaptation",
    "sigma_band",
    "step_weights",
]

__version__ = "0.1.0"

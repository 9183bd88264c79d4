"""Synthetic passive-sonar texture datasets and texture scoring (StaTS / StrTS)."""

__version__ = "0.1.0"

from .core import (AmplitudeModel, BlendPlan, HarmonicPlan, ModulationPlan, NoiseModel, RngHandle,
                   SignalBuffer, blend_weight, sample_k, sample_rayleigh)
from .texture import StaTSParams, self_similarity, stats_score, strts_score

__all__ = [
    "AmplitudeModel", "BlendPlan", "HarmonicPlan", "ModulationPlan", "NoiseModel", "RngHandle",
    "SignalBuffer", "StaTSParams", "blend_weight", "sample_k", "sample_rayleigh", "self_similarity",
    "stats_score", "strts_score",
]

"""Spline-based hidden Markov weather generator for daily precipitation."""

from .ghcn import DailySeries, Season, load_series
from .inference import ChainConfig, LikelihoodEvaluator, PosteriorSamples, ffbs_impute, forward_loglik, run_chains
from .model import HmmModel, HmmParams, ModelSpec
from .splines import build_basis

__version__ = "0.1.0"

__all__ = [
    "ChainConfig", "DailySeries", "HmmModel", "HmmParams", "LikelihoodEvaluator", "ModelSpec", "PosteriorSamples",
    "Season", "build_basis", "ffbs_impute", "forward_loglik", "load_series", "run_chains",
]

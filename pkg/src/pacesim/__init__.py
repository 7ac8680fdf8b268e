"""Simulation of budget and return-on-spend pacing for autobidding.

Three pacers (dual-optimal, sequential and min) shade a value-based bid with
multiplicative dual variables.  The package provides auction environments,
an episode kernel (compiled when available), ground-truth oracles, metrics
and packaged experiments.
"""
__version__ = "0.1.0"

from .auction import AuctionSample, BidOutcome, LinearAllocation, SecondPrice, evaluate
from .environments import (AdversarialInstance, CampaignLandscape, ExponentialSecondPriceEnv,
                           SemiSyntheticEnv, UniformSecondPriceEnv, make_env)
from .kernels import BACKEND
from .metrics import EpisodeResult, bucket_table, regret_estimate, summarize
from .pacing import PacerConfig, PacerKind, Trajectory, run_episode

__all__ = [
    "AdversarialInstance", "AuctionSample", "BACKEND", "BidOutcome", "CampaignLandscape",
    "EpisodeResult", "ExponentialSecondPriceEnv", "LinearAllocation", "PacerConfig", "PacerKind",
    "SecondPrice", "SemiSyntheticEnv", "Trajectory", "UniformSecondPriceEnv", "bucket_table",
    "evaluate", "make_env", "regret_estimate", "run_episode", "summarize",
]

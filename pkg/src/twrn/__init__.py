"""Partially-blind channel estimation for reciprocal AF two-way relay networks.

ML and minimum sample envelope variance (MSEV) estimators of the
self-interference channel, their large-sample and high-SNR analysis,
Cramer-Rao bounds and a Monte-Carlo experiment harness.
"""

from .analysis import AsymptoticContext, theoretical_variance
from .bounds import BoundReport, crb_a, mcrb_a
from .estimators import ML, MSEV, EstimateReport, estimate, estimate_by_grid
from .experiments import ExperimentSpec, run_experiment
from .model import ChannelState, ObservationBatch, SystemConfig, simulate_batch
from .optimize import SolverConfig

__version__ = "0.1.0"

__all__ = [
    "AsymptoticContext",
    "theoretical_variance",
    "BoundReport",
    "crb_a",
    "mcrb_a",
    "ML",
    "MSEV",
    "EstimateReport",
    "estimate",
    "estimate_by_grid",
    "ExperimentSpec",
    "run_experiment",
    "ChannelState",
    "ObservationBatch",
    "SystemConfig",
    "simulate_batch",
    "SolverConfig",
]

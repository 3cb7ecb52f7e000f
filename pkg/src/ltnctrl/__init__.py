"""Data-driven stabilization of linear-threshold networks."""

from .closed_loop import FeedforwardController, IntegralController, run_closed_loop
from .data import DataMatrices, DataSet, build_data_matrices, check_richness, collect_random_dataset
from .model import LtnSystem, simulate, step, step_with_disturbance, threshold_clamp
from .synthesis import (
    InfeasibleSynthesisError,
    NumericalError,
    SynthesisResult,
    synthesize,
    validate_certificate,
)

__version__ = "0.1.0"

__all__ = [
    "DataMatrices",
    "DataSet",
    "FeedforwardController",
    "InfeasibleSynthesisError",
    "IntegralController",
    "LtnSystem",
    "NumericalError",
    "SynthesisResult",
    "build_data_matrices",
    "check_richness",
    "collect_random_dataset",
    "run_closed_loop",
    "simulate",
    "step",
    "step_with_disturbance",
    "synthesize",
    "threshold_clamp",
    "validate_certificate",
]

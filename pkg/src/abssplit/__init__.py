"""Asymmetric budget split experiments for two-sided marketplaces."""

__version__ = "0.1.0"

from .assigner import AllocationLabel, allocate_copies, assign_user, split_ads, split_budget
from .diagnostics import balance_test, power_analysis, side_effect_ab
from .domain import (
    Ad,
    AdCopy,
    CopyType,
    DataError,
    EstimationRow,
    IncrementalityEstimate,
    Interaction,
    InteractionKind,
    LiftEstimate,
    SplitConfig,
    SubMarket,
    validate_dataset,
)
from .estimator import (
    EstimationError,
    RankDeficientError,
    RegressionSpec,
    estimate_by_segment,
    estimate_incrementality,
    estimate_lift,
    forecast_performance,
)
from .marketsim import ResponseModel, SimConfig, generate_population, simulate_outcomes
from .pipeline import build_estimation_data

__all__ = [
    "Ad",
    "AdCopy",
    "AllocationLabel",
    "CopyType",
    "DataError",
    "EstimationError",
    "EstimationRow",
    "IncrementalityEstimate",
    "Interaction",
    "InteractionKind",
    "LiftEstimate",
    "RankDeficientError",
    "RegressionSpec",
    "ResponseModel",
    "SimConfig",
    "SplitConfig",
    "SubMarket",
    "allocate_copies",
    "assign_user",
    "balance_test",
    "build_estimation_data",
    "estimate_by_segment",
    "estimate_incrementality",
    "estimate_lift",
    "forecast_performance",
    "generate_population",
    "power_analysis",
    "side_effect_ab",
    "simulate_outcomes",
    "split_ads",
    "split_budget",
]

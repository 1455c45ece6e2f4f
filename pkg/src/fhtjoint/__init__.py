"""Bayesian joint model of multivariate longitudinal biomarkers and
first-hitting-time survival outcomes."""

__version__ = "0.1.0"

from .data import Dataset, LongitudinalPanel, SurvivalData
from .fht import (
    FhtParams,
    InfeasibleQuantileError,
    NoMassError,
    cure_rate,
    fht_logpdf,
    fht_logsf,
    fht_mc_oracle,
    fht_quantile,
    fht_sample,
    fht_sample_truncated,
    fht_survival,
)
from .spec import ModelSpec, PriorConfig
from .model import JointModel, ThresholdModel
from .sampler import PosteriorDraws, SamplerConfig, run_chain, run_chains
from .simulate import PRESETS, ScenarioConfig, generate_dataset, get_preset
from .bench import compute_metrics, run_replications
from .report import median_event_time, ppc_longitudinal, ppc_survival, survival_curve

__all__ = [
    "Dataset", "LongitudinalPanel", "SurvivalData",
    "FhtParams", "InfeasibleQuantileError", "NoMassError", "cure_rate", "fht_logpdf",
    "fht_logsf", "fht_mc_oracle", "fht_quantile", "fht_sample", "fht_sample_truncated",
    "fht_survival",
    "ModelSpec", "PriorConfig", "JointModel", "ThresholdModel",
    "PosteriorDraws", "SamplerConfig", "run_chain", "run_chains",
    "PRESETS", "ScenarioConfig", "generate_dataset", "get_preset",
    "compute_metrics", "run_replications",
    "median_event_time", "ppc_longitudinal", "ppc_survival", "survival_curve",
]

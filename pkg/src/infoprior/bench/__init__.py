"""Experiment harness: data, cross-validation, orchestration and the CLI."""

from .config import ConfigError, load_config, parse_config
from .data import (
    DataError,
    Dataset,
    SynthConfig,
    extend_dataset,
    load_csv,
    standardize_split,
    synth_generate,
    synth_regression,
)
from .experiment import ExperimentConfig, cv_grid, run_experiment

__all__ = [
    "ConfigError",
    "DataError",
    "Dataset",
    "ExperimentConfig",
    "SynthConfig",
    "cv_grid",
    "extend_dataset",
    "load_config",
    "load_csv",
    "parse_config",
    "run_experiment",
    "standardize_split",
    "synth_generate",
    "synth_regression",
]

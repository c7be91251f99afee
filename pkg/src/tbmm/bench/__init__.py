"""Benchmark harness: experiment configs, seeded trials, CSV traces and figures."""

from .config import DEFAULT_CONFIGS, ExperimentConfig, load_config, parse_config
from .runner import run_experiment, splitmix64, trial_seed

__all__ = ["DEFAULT_CONFIGS", "ExperimentConfig", "load_config", "parse_config",
           "run_experiment", "splitmix64", "trial_seed"]

"""Experiment harness: configuration, study runner and CLI."""

from .config import ConfigError, ExperimentSpec, load_config, parse_config
from .experiment import compare_baselines, run_experiment, verify_manifest

__all__ = ["ConfigError", "ExperimentSpec", "load_config", "parse_config",
           "compare_baselines", "run_experiment", "verify_manifest"]

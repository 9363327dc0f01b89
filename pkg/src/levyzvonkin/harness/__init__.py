"""Config-driven experiment driver and command line interface."""

from .config import ExperimentConfig, load_config, parse_config
from .runner import run_experiments

__all__ = ["ExperimentConfig", "load_config", "parse_config", "run_experiments"]

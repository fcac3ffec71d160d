"""Seeded experiment sweeps and the command-line interface."""

from .config import ConfigError, ExperimentConfig, load
from .experiments import ResultRow, normalized_barrier_summary, run

__all__ = ["ConfigError", "ExperimentConfig", "load", "ResultRow", "normalized_barrier_summary", "run"]

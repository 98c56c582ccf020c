"""Experiment configs, dispatch and reporting behind the ``bayesda`` command."""
from .config import METHODS, ConfigError, ExperimentConfig, MethodParams, emit_config, parse_config
from .report import RunReport, emit_report
from .runner import bench, compare, run_experiment

__all__ = [
    "METHODS",
    "ConfigError",
    "ExperimentConfig",
    "MethodParams",
    "RunReport",
    "bench",
    "compare",
    "emit_config",
    "emit_report",
    "parse_config",
    "run_experiment",
]

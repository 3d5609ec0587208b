"""Experiment orchestration: config parsing, runs, CSV artifacts, CLI."""

from flab.harness.config import CONFIG_SCHEMA, default_config, parse_config, validate_config
from flab.harness.csvio import (METRICS_HEADER, MetricRow, read_figure_csv,
                                read_metrics_csv, write_figure_csv,
                                write_mean_curves_csv, write_metrics_csv)
from flab.harness.runner import run_experiment
from flab.harness.figdata import FIGURES, export_figure_data

__all__ = [
    "CONFIG_SCHEMA",
    "default_config",
    "parse_config",
    "validate_config",
    "METRICS_HEADER",
    "MetricRow",
    "read_metrics_csv",
    "read_figure_csv",
    "write_metrics_csv",
    "write_mean_curves_csv",
    "write_figure_csv",
    "run_experiment",
    "FIGURES",
    "export_figure_data",
]

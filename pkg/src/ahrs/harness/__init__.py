"""Experiment harness: configuration, metrics, seed sweeps and the CLI."""

from .config import dump_config, load_config, parse_config_text
from .experiment import RunRecord, run_experiment, summarize
from .metrics import MetricsWriter, read_metrics

__all__ = ["dump_config", "load_config", "parse_config_text", "RunRecord", "run_experiment",
           "summarize", "MetricsWriter", "read_metrics"]

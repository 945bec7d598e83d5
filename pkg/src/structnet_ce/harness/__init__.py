"""Experiment configuration, runner and self-tests."""

from .config import ExperimentConfig, load_config
from .runner import CSV_HEADER, ResultRecord, run_sweep, run_trial, run_trials, summarize
from .selftest import run_selftest

__all__ = ["CSV_HEADER", "ExperimentConfig", "ResultRecord", "load_config", "run_selftest", "run_sweep",
           "run_trial", "run_trials", "summarize"]

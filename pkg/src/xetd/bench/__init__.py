"""Experiment harness: configs, seeded runs, sweeps, CSV output and the CLI."""

from .config import ALPHA_GRID, BETA_GRID, ExperimentConfig, load_config, resolve_problem
from .harness import RunRecord, SweepResult, analyze, baird_grid, run_experiment, select_best, sweep
from .io import emit_csv, read_csv

__all__ = [
    "ALPHA_GRID",
    "BETA_GRID",
    "ExperimentConfig",
    "RunRecord",
    "SweepResult",
    "analyze",
    "emit_csv",
    "load_config",
    "baird_grid",
    "read_csv",
    "resolve_problem",
    "run_experiment",
    "select_best",
    "sweep",
]

"""Experiment presets, seed fan-out and statistics."""

from agentsim.experiments.presets import PRESETS, Cell, ExperimentPreset, JobKind, get_preset, run_cell
from agentsim.experiments.runner import ExperimentResult, run_preset
from agentsim.experiments.stats import remove_outliers_iqr, significance_stars, summarize, welch_ttest

__all__ = [
    "PRESETS",
    "Cell",
    "ExperimentPreset",
    "JobKind",
    "get_preset",
    "run_cell",
    "ExperimentResult",
    "run_preset",
    "remove_outliers_iqr",
    "significance_stars",
    "summarize",
    "welch_ttest",
]

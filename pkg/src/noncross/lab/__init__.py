"""Configuration, toy data, checkpoints, experiment orchestration and plots."""

from .config import DatasetConfig, ExperimentConfig, SampleConfig, ScheduleConfig
from .datasets import generate_dataset
from .experiment import run_experiment
from .plots import export_plots

__all__ = [
    "DatasetConfig",
    "ExperimentConfig",
    "SampleConfig",
    "ScheduleConfig",
    "export_plots",
    "generate_dataset",
    "run_experiment",
]

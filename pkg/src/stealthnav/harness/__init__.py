"""Training/evaluation protocols, CSV and scene logging, rendering, CLI."""

from .config import ConfigError, EvalConfig, SimConfig, TrainConfig
from .episodes import load_record, run_episode, save_record
from .evaluate import BenchmarkReport, aggregate_rows, evaluate
from .render import render_episode, render_record_file
from .train import train

__all__ = [
    "BenchmarkReport",
    "ConfigError",
    "EvalConfig",
    "SimConfig",
    "TrainConfig",
    "aggregate_rows",
    "evaluate",
    "load_record",
    "render_episode",
    "render_record_file",
    "run_episode",
    "save_record",
    "train",
]

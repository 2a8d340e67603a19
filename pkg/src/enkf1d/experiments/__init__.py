"""Monte Carlo harness and experiment suite."""

from .config import ExperimentConfig, build_config, read_config_file
from .harness import (
    block_rng,
    fit_loglog_slope,
    ks_two_sample,
    run_blocks,
    sliced_wasserstein1,
    wasserstein1_empirical,
)
from .result import COLUMNS, ExperimentResult, Row, Verdict
from .suite import EXPERIMENTS, get_config, run_experiment

__all__ = [
    "ExperimentConfig",
    "build_config",
    "read_config_file",
    "block_rng",
    "fit_loglog_slope",
    "ks_two_sample",
    "run_blocks",
    "sliced_wasserstein1",
    "wasserstein1_empirical",
    "COLUMNS",
    "ExperimentResult",
    "Row",
    "Verdict",
    "EXPERIMENTS",
    "get_config",
    "run_experiment",
]

"""Monte Carlo experiments and their reports."""

from .experiments import (EXPERIMENTS, describe, experiment_names,  # noqa: F401
                          run_experiment, shared_free_convolution)
from .report import Check, ExperimentReport, batch_se, config_hash  # noqa: F401

"""Federated prompt tuning simulator with eigenvalue-scored layer selection
and server-side momentum with per-device control variates."""

from ._accel import backend
from .datasets import Dataset, PartitionSpec, dirichlet_partition, load_table, synth_task
from .federation import Federation, FederationConfig, run_experiment
from .model import Backbone, Example, evaluate, forward, loss, prompt_gradient
from .optim import adam_step, make_optimizer, server_round

__version__ = "0.1.0"

__all__ = [
    "Backbone",
    "Dataset",
    "Example",
    "Federation",
    "FederationConfig",
    "PartitionSpec",
    "adam_step",
    "backend",
    "dirichlet_partition",
    "evaluate",
    "forward",
    "load_table",
    "loss",
    "make_optimizer",
    "prompt_gradient",
    "run_experiment",
    "server_round",
    "synth_task",
]

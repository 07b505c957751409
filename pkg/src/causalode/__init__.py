"""Counterfactual trajectory forecasting for treated, interacting agents.

The package learns continuous latent dynamics of agents coupled through a
time-varying weighted graph and subject to multiple binary treatments,
then answers what-if questions: how would outcome trajectories change
under an edited treatment schedule?
"""

from .errors import (
    CausalOdeError,
    CheckpointError,
    ConfigError,
    DivergenceError,
    DomainError,
    EmptySplitError,
    IngestionError,
    SchemaError,
    ScriptError,
    UnsupportedOperationError,
)
from .estimator import GraphODEForecaster
from .model import GraphODEModel
from .panel import (
    Chunk,
    NormStats,
    ObservationPanel,
    compute_interference,
    fit_normalizer,
    flip_treatments,
    load_panel,
    save_panel,
    split_panel,
)
from .pkpd import CohortConfig, SimulatedCohort, simulate_cohort
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "CausalOdeError",
    "CheckpointError",
    "Chunk",
    "CohortConfig",
    "ConfigError",
    "DivergenceError",
    "DomainError",
    "EmptySplitError",
    "GraphODEForecaster",
    "GraphODEModel",
    "IngestionError",
    "NormStats",
    "ObservationPanel",
    "SchemaError",
    "ScriptError",
    "SimulatedCohort",
    "TrainConfig",
    "UnsupportedOperationError",
    "compute_interference",
    "fit_normalizer",
    "flip_treatments",
    "load_checkpoint",
    "load_panel",
    "save_checkpoint",
    "save_panel",
    "simulate_cohort",
    "split_panel",
    "train",
    "__version__",
]

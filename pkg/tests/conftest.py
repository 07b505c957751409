import numpy as np
import pytest

from causalode.panel import ObservationPanel
from causalode.pkpd import CohortConfig, simulate_cohort
from causalode.training import TrainConfig, train


def make_panel(
    n_agents: int = 3,
    n_steps: int = 12,
    n_covariates: int = 2,
    n_treatments: int = 2,
    n_outcomes: int = 1,
    seed: int = 0,
) -> ObservationPanel:
    """A small random panel with a fixed ring graph."""
    rng = np.random.default_rng(seed)
    adjacency = np.zeros((n_steps, n_agents, n_agents))
    for i in range(n_agents):
        adjacency[:, i, (i + 1) % n_agents] = 1.0
    return ObservationPanel(
        covariates=rng.normal(size=(n_agents, n_steps, n_covariates)),
        adjacency=adjacency,
        treatments=rng.integers(0, 2, size=(n_steps, n_agents, n_treatments)).astype(float),
        outcomes=rng.normal(size=(n_agents, n_steps, n_outcomes)),
    )


@pytest.fixture(scope="session")
def tiny_cohort():
    """Five short 4-region patients, enough for end-to-end paths."""
    config = CohortConfig(
        n_patients=5, n_regions=4, edge_count_range=(3, 5), horizon=30, seed=3
    )
    return simulate_cohort(config)


@pytest.fixture(scope="session")
def tiny_config():
    return TrainConfig(
        obs_len=5,
        pred_len=6,
        interval=3,
        latent_dim=6,
        hidden_dim=16,
        control_dim=3,
        substeps=3,
        epochs=2,
        batch_size=8,
        seed=0,
    )


@pytest.fixture(scope="session")
def tiny_fit(tiny_cohort, tiny_config):
    """A briefly trained model shared by scenario, service and CLI tests."""
    return train(tiny_cohort.panels, tiny_config)

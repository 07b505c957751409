"""Scikit-learn style estimator facade over the training pipeline."""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .errors import DomainError
from .model import collate
from .panel import Chunk, ObservationPanel, split_panel
from .training import TrainConfig, evaluate_factual, train


def check_panels(panels) -> list[ObservationPanel]:
    """Validate a panel or sequence of panels and return them as a list."""
    if isinstance(panels, ObservationPanel):
        panels = [panels]
    panels = list(panels)
    if not panels:
        raise DomainError("need at least one panel")
    for p in panels:
        if not isinstance(p, ObservationPanel):
            raise DomainError(f"expected ObservationPanel, got {type(p).__name__}")
    shapes = {(p.n_covariates, p.n_treatments, p.n_outcomes) for p in panels}
    if len(shapes) != 1:
        raise DomainError(f"panels disagree on feature dimensions: {sorted(shapes)}")
    return panels


class GraphODEForecaster(BaseEstimator):
    """Forecaster for outcome trajectories of treated, interacting agents.

    Wraps the full pipeline (windowing, normalization, model training)
    behind fit/predict. Parameters mirror TrainConfig; see that class for
    semantics. Fitted attributes follow the trailing-underscore convention.
    """

    def __init__(
        self,
        obs_len: int = 7,
        pred_len: int = 14,
        interval: int = 3,
        latent_dim: int = 20,
        hidden_dim: int = 64,
        control_dim: int = 5,
        encoder_layers: int = 1,
        substeps: int = 5,
        learning_rate: float = 0.005,
        batch_size: int = 8,
        epochs: int = 20,
        weight_decay: float = 1e-4,
        edge_weight: float = 0.5,
        treatment_weight: float = 10.0,
        interference_weight: float = 10.0,
        kl_weight: float = 1.0,
        attention: bool = True,
        balance_treatments: bool = True,
        balance_interference: bool = True,
        patience: int = 10,
        val_fraction: float = 0.15,
        test_fraction: float = 0.15,
        split_mode: str = "auto",
        scale: str = "standard",
        seed: int = 0,
    ):
        self.obs_len = obs_len
        self.pred_len = pred_len
        self.interval = interval
        self.latent_dim = latent_dim
        self.hidden_dim = hidden_dim
        self.control_dim = control_dim
        self.encoder_layers = encoder_layers
        self.substeps = substeps
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.weight_decay = weight_decay
        self.edge_weight = edge_weight
        self.treatment_weight = treatment_weight
        self.interference_weight = interference_weight
        self.kl_weight = kl_weight
        self.attention = attention
        self.balance_treatments = balance_treatments
        self.balance_interference = balance_interference
        self.patience = patience
        self.val_fraction = val_fraction
        self.test_fraction = test_fraction
        self.split_mode = split_mode
        self.scale = scale
        self.seed = seed

    def _config(self) -> TrainConfig:
        return TrainConfig(
            obs_len=self.obs_len,
            pred_len=self.pred_len,
            interval=self.interval,
            latent_dim=self.latent_dim,
            hidden_dim=self.hidden_dim,
            control_dim=self.control_dim,
            encoder_layers=self.encoder_layers,
            substeps=self.substeps,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            weight_decay=self.weight_decay,
            edge_weight=self.edge_weight,
            treatment_weight=self.treatment_weight,
            interference_weight=self.interference_weight,
            kl_weight=self.kl_weight,
            no_treatment_balance=not self.balance_treatments,
            no_interference_balance=not self.balance_interference,
            no_attention=not self.attention,
            patience=self.patience,
            val_fraction=self.val_fraction,
            test_fraction=self.test_fraction,
            split_mode=self.split_mode,
            scale=self.scale,
            seed=self.seed,
        )

    def fit(self, X, y=None):
        """Train on one panel or a sequence of panels; y is ignored."""
        panels = check_panels(X)
        result = train(panels, self._config())
        self.model_ = result.model
        self.checkpoint_ = result.checkpoint
        self.stats_ = result.checkpoint.stats
        self.split_ = result.split
        self.history_ = result.history
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("this forecaster is not fitted yet; call fit first")

    def predict(self, X, horizon: int | None = None, treatments: np.ndarray | None = None) -> np.ndarray:
        """Forecast outcome trajectories for one panel.

        Conditions on the panel's first obs_len steps and predicts the next
        ``horizon`` (default pred_len). ``treatments`` optionally replaces
        the panel's full schedule, giving counterfactual predictions.
        Returns a denormalized array [n_agents, horizon, n_outcomes].
        """
        self._check_fitted()
        panel = check_panels(X)[0]
        horizon = self.pred_len if horizon is None else horizon
        if self.obs_len + horizon > panel.n_steps:
            raise DomainError(
                f"obs_len {self.obs_len} + horizon {horizon} exceeds panel length {panel.n_steps}"
            )
        chunk = Chunk(panel, 0, self.obs_len, horizon)
        schedules = None if treatments is None else [np.asarray(treatments, dtype=np.float64)]
        with torch.no_grad():
            out = self.model_(collate([chunk], self.stats_, schedules=schedules), sample=False)
        pred = out.outcomes[:, 0].permute(1, 0, 2).numpy()
        return self.stats_.denormalize_outcomes(pred)

    def score(self, X, y=None) -> float:
        """Negative factual RMSE over the panels' windows (higher is better)."""
        self._check_fitted()
        panels = check_panels(X)
        chunks = [
            c for p in panels for c in split_panel(p, self.obs_len, self.pred_len, self.interval)
        ]
        return -evaluate_factual(self.model_, self.stats_, chunks, self.pred_len)

"""The assembled forecaster: encoder, treatment fusion, dynamics, decoders.

A forward pass encodes the observation window into latent initial states,
integrates the coupled node/edge dynamics across the prediction window
under the treatment control signal, and decodes outcome trajectories and
edge weights. Losses add the adversarial balancing heads and the KL term.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .dynamics import EdgeDecoder, LatentDynamics, NodeDecoder, SolverConfig, integrate
from .encoding import SpatioTemporalEncoder, sample_initial
from .errors import DomainError
from .fusing import TreatmentFuser, control_signals
from .objectives import (
    InterferenceRegressor,
    LossReport,
    LossWeights,
    TreatmentDiscriminator,
    interference_balance_loss,
    kl_loss,
    recon_losses,
    total_loss,
    treatment_balance_loss,
)
from .panel import Chunk, NormStats, interference_values


@dataclass(frozen=True)
class Batch:
    """Collated tensors for a batch of chunks, all float64.

    Observation tensors are [B, O, ...]; prediction-window tensors are
    [B, M, ...]. ``active`` and ``elapsed`` carry the treatment control
    signal (flags and elapsed run times at the window's grid points),
    ``interference`` the neighborhood exposure targets.
    """

    obs_covariates: torch.Tensor  # [B, O, N, F]
    obs_adjacency: torch.Tensor  # [B, O, N, N]
    active: torch.Tensor  # [B, M, N, K]
    elapsed: torch.Tensor  # [B, M, N, K]
    outcomes: torch.Tensor  # [B, M, N, d2]
    adjacency: torch.Tensor  # [B, M, N, N]
    interference: torch.Tensor  # [B, M, N, K]

    @property
    def horizon(self) -> int:
        return self.active.shape[1]


def collate(
    chunks: Sequence[Chunk],
    stats: NormStats,
    horizon: int | None = None,
    schedules: Sequence[np.ndarray] | None = None,
) -> Batch:
    """Build a batch from chunks sharing one panel geometry.

    horizon limits the prediction window to its first steps. ``schedules``
    optionally replaces each chunk's treatment schedule with an edited full
    [T, N, K] array; run starts and interference are recomputed from it.
    """
    if not chunks:
        raise DomainError("cannot collate zero chunks")
    if schedules is not None and len(schedules) != len(chunks):
        raise DomainError("need one schedule per chunk")

    parts = {name: [] for name in Batch.__dataclass_fields__}
    for idx, chunk in enumerate(chunks):
        panel = chunk.panel
        m = chunk.pred_len if horizon is None else horizon
        if m < 1 or m > chunk.pred_len:
            raise DomainError(f"horizon {m} not in [1, {chunk.pred_len}]")
        p0 = chunk.pred_start
        schedule = panel.treatments if schedules is None else np.asarray(schedules[idx], dtype=np.float64)
        if schedule.shape != panel.treatments.shape:
            raise DomainError(
                f"schedule shape {schedule.shape} does not match panel {panel.treatments.shape}"
            )
        active, elapsed = control_signals(schedule, p0, m)
        parts["obs_covariates"].append(
            stats.normalize_covariates(panel.covariates[:, chunk.start : p0, :]).transpose(1, 0, 2)
        )
        parts["obs_adjacency"].append(panel.adjacency[chunk.start : p0])
        parts["active"].append(active)
        parts["elapsed"].append(elapsed)
        parts["outcomes"].append(
            stats.normalize_outcomes(panel.outcomes[:, p0 : p0 + m, :]).transpose(1, 0, 2)
        )
        parts["adjacency"].append(panel.adjacency[p0 : p0 + m])
        parts["interference"].append(
            interference_values(panel.adjacency[p0 : p0 + m], schedule[p0 : p0 + m])
        )
    tensors = {
        name: torch.from_numpy(np.ascontiguousarray(np.stack(arrs))).double()
        for name, arrs in parts.items()
    }
    return Batch(**tensors)


@dataclass
class ModelOutput:
    """Everything a forward pass produces, trajectory-major ([M, B, ...])."""

    mu: torch.Tensor
    sigma: torch.Tensor
    node_traj: torch.Tensor  # [M, B, N, d]
    edge_traj: torch.Tensor  # [M, B, N, N, d]
    outcomes: torch.Tensor  # [M, B, N, d2]
    edge_weights: torch.Tensor  # [M, B, N, N]


class GraphODEModel(nn.Module):
    """Latent graph-dynamics forecaster over treated interacting agents.

    The balancing heads are only constructed when their losses are active,
    so ablated variants carry no dormant parameters.
    """

    def __init__(
        self,
        n_features: int,
        n_treatments: int,
        n_outcomes: int = 1,
        latent_dim: int = 20,
        hidden_dim: int = 64,
        control_dim: int = 5,
        encoder_layers: int = 1,
        encoder_nonlinearity: str = "relu",
        drift_nonlinearity: str = "tanh",
        attention: bool = True,
        balance_treatments: bool = True,
        balance_interference: bool = True,
        solver: SolverConfig | None = None,
    ):
        super().__init__()
        self.n_features = n_features
        self.n_treatments = n_treatments
        self.n_outcomes = n_outcomes
        self.solver = solver or SolverConfig()
        self.encoder = SpatioTemporalEncoder(
            n_features,
            hidden_dim=hidden_dim,
            latent_dim=latent_dim,
            n_layers=encoder_layers,
            nonlinearity=encoder_nonlinearity,
        )
        self.fuser = TreatmentFuser(n_treatments, compact_dim=control_dim, attention=attention)
        self.dynamics = LatentDynamics(latent_dim, control_dim, nonlinearity=drift_nonlinearity)
        self.node_decoder = NodeDecoder(latent_dim, n_outcomes)
        self.edge_decoder = EdgeDecoder(latent_dim)
        self.discriminator = TreatmentDiscriminator(latent_dim, n_treatments) if balance_treatments else None
        self.regressor = (
            InterferenceRegressor(latent_dim, control_dim, n_treatments) if balance_interference else None
        )

    def _control(self, active: torch.Tensor, elapsed: torch.Tensor):
        def control(grid: int, frac: float) -> torch.Tensor:
            return self.fuser(active[:, grid], elapsed[:, grid] + frac)

        return control

    def forward(
        self,
        batch: Batch,
        generator: torch.Generator | None = None,
        sample: bool = True,
    ) -> ModelOutput:
        """Encode, integrate and decode one batch.

        With sample=False the posterior mean is used instead of a draw,
        the deterministic mode every evaluation path relies on.
        """
        mu, sigma = self.encoder(batch.obs_covariates, batch.obs_adjacency)
        z0 = sample_initial(mu, sigma, generator) if sample else mu
        e0 = self.encoder.edge_initial(z0)
        extra = tuple(p for p in self.fuser.parameters() if p.requires_grad)
        node_traj, edge_traj = integrate(
            self.dynamics,
            self._control(batch.active, batch.elapsed),
            z0,
            e0,
            batch.horizon,
            self.solver,
            extra_params=extra,
        )
        return ModelOutput(
            mu=mu,
            sigma=sigma,
            node_traj=node_traj,
            edge_traj=edge_traj,
            outcomes=self.node_decoder(node_traj),
            edge_weights=self.edge_decoder(node_traj),
        )

    def losses(
        self,
        batch: Batch,
        weights: LossWeights,
        generator: torch.Generator | None = None,
        sample: bool = True,
    ) -> tuple[torch.Tensor, LossReport]:
        """Weighted training loss and its per-component report."""
        out = self.forward(batch, generator=generator, sample=sample)
        zero = torch.zeros((), dtype=out.outcomes.dtype)

        outcome_l, edge_l = recon_losses(
            out.outcomes,
            batch.outcomes.transpose(0, 1),
            out.edge_weights,
            batch.adjacency.transpose(0, 1),
        )
        active_traj = batch.active.transpose(0, 1)
        treatment_l = (
            treatment_balance_loss(out.node_traj, active_traj, self.discriminator)
            if self.discriminator is not None
            else zero
        )
        if self.regressor is not None:
            controls = self.fuser(batch.active, batch.elapsed).transpose(0, 1)
            interference_l = interference_balance_loss(
                out.node_traj, controls, batch.interference.transpose(0, 1), self.regressor
            )
        else:
            interference_l = zero
        kl_l = kl_loss(out.mu, out.sigma)

        total = total_loss(outcome_l, edge_l, treatment_l, interference_l, kl_l, weights)
        report = LossReport(
            outcome=float(outcome_l.detach()),
            edge=float(edge_l.detach()),
            treatment=float(treatment_l.detach()),
            interference=float(interference_l.detach()),
            kl=float(kl_l.detach()),
            total=float(total.detach()),
        )
        return total, report

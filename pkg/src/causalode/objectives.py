"""Training objectives: reconstruction, adversarial balancing, KL regularization.

The two balancing losses push the latent trajectory toward carrying no
information about which treatments were applied or how exposed an agent's
neighborhood was. Their heads train to predict those quantities, while a
gradient-reversing passthrough feeds the negated gradient to everything
upstream, the usual min-max construction collapsed into one backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .errors import DomainError

PROB_FLOOR = 1e-7


class _ReverseGradient(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad):
        return grad.neg()


def grl(x: torch.Tensor) -> torch.Tensor:
    """Identity in the forward pass, sign-flipped gradient in the backward."""
    return _ReverseGradient.apply(x)


class TreatmentDiscriminator(nn.Module):
    """Per-treatment logits from a node latent, hidden = d/2."""

    def __init__(self, latent_dim: int, n_treatments: int):
        super().__init__()
        hidden = max(latent_dim // 2, 1)
        self.net = nn.Sequential(nn.Linear(latent_dim, hidden), nn.Tanh(), nn.Linear(hidden, n_treatments))
        self.double()

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.net(z)


class InterferenceRegressor(nn.Module):
    """Neighborhood-exposure estimates from a latent plus fused control."""

    def __init__(self, latent_dim: int, control_dim: int, n_treatments: int):
        super().__init__()
        joint = latent_dim + control_dim
        hidden = max(joint // 2, 1)
        self.net = nn.Sequential(nn.Linear(joint, hidden), nn.Tanh(), nn.Linear(hidden, n_treatments))
        self.double()

    def forward(self, z_and_control: torch.Tensor) -> torch.Tensor:
        return self.net(z_and_control)


def recon_losses(
    pred_outcomes: torch.Tensor,
    true_outcomes: torch.Tensor,
    pred_edges: torch.Tensor,
    true_edges: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Outcome and edge reconstruction errors.

    Outcome loss averages the squared L2 error of each agent-step outcome
    vector; edge loss is the mean squared entry error of the reconstructed
    weight matrices (the per-step Frobenius form with its 1/N^2 factor).
    """
    if pred_outcomes.shape != true_outcomes.shape:
        raise DomainError(
            f"outcome shapes differ: {tuple(pred_outcomes.shape)} vs {tuple(true_outcomes.shape)}"
        )
    if pred_edges.shape != true_edges.shape:
        raise DomainError(f"edge shapes differ: {tuple(pred_edges.shape)} vs {tuple(true_edges.shape)}")
    outcome = (pred_outcomes - true_outcomes).pow(2).sum(dim=-1).mean()
    edge = (pred_edges - true_edges).pow(2).mean()
    return outcome, edge


def treatment_balance_loss(
    latents: torch.Tensor, treatments: torch.Tensor, discriminator: TreatmentDiscriminator
) -> torch.Tensor:
    """Mean per-treatment binary cross-entropy on gradient-reversed latents."""
    logits = discriminator(grl(latents))
    probs = torch.sigmoid(logits).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
    return -(treatments * probs.log() + (1.0 - treatments) * (1.0 - probs).log()).mean()


def interference_balance_loss(
    latents: torch.Tensor,
    controls: torch.Tensor,
    interference: torch.Tensor,
    regressor: InterferenceRegressor,
) -> torch.Tensor:
    """Mean squared exposure-recovery error on the gradient-reversed joint input."""
    pred = regressor(grl(torch.cat([latents, controls], dim=-1)))
    return (pred - interference).pow(2).mean()


def kl_loss(mu: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
    """Closed-form KL of diagonal Gaussians against the standard normal.

    Summed over the trailing (agent, dimension) axes, averaged over any
    leading batch axes.
    """
    kl = 0.5 * (mu.pow(2) + sigma.pow(2) - 1.0 - 2.0 * sigma.log())
    per_sample = kl.sum(dim=(-2, -1))
    return per_sample.mean() if per_sample.ndim else per_sample


@dataclass(frozen=True)
class LossWeights:
    """Multipliers for the weighted total loss."""

    edge: float = 0.5
    treatment: float = 10.0
    interference: float = 10.0
    kl: float = 1.0

    def __post_init__(self):
        if min(self.edge, self.treatment, self.interference, self.kl) < 0:
            raise DomainError("loss weights must be nonnegative")


def total_loss(
    outcome: torch.Tensor,
    edge: torch.Tensor,
    treatment: torch.Tensor,
    interference: torch.Tensor,
    kl: torch.Tensor,
    weights: LossWeights,
) -> torch.Tensor:
    return (
        outcome
        + weights.edge * edge
        + weights.treatment * treatment
        + weights.interference * interference
        + weights.kl * kl
    )


@dataclass(frozen=True)
class LossReport:
    """Scalar loss components of one batch, total included."""

    outcome: float
    edge: float
    treatment: float
    interference: float
    kl: float
    total: float

    def to_record(self) -> dict[str, float]:
        return {
            "outcome": self.outcome,
            "edge": self.edge,
            "treatment": self.treatment,
            "interference": self.interference,
            "kl": self.kl,
            "total": self.total,
        }

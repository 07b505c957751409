"""Spatio-temporal encoder: from an observation window to latent initial states.

Agent observations over the conditioning window form one graph whose
vertices are (agent, timestamp) pairs. Spatial edges copy the panel's
weighted adjacency within each timestamp; temporal edges link consecutive
timestamps of the same agent with weight 1. Attention message passing over
this graph, followed by per-agent sequence pooling, yields the posterior
over each agent's latent initial state.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .errors import ConfigError, DomainError

ENCODING_BASE = 10000.0

_ACTIVATIONS = {"relu": torch.relu, "tanh": torch.tanh}


def temporal_encoding(offsets: torch.Tensor | float, dim: int) -> torch.Tensor:
    """Interleaved sin/cos code of a time offset.

    Component 2i is sin(offset / base^(2i/dim)), component 2i+1 the matching
    cosine. Accepts any tensor of offsets and appends the encoding dim.
    """
    if dim % 2:
        raise ConfigError(f"temporal encoding needs an even dimension, got {dim}")
    if not torch.is_tensor(offsets):
        offsets = torch.tensor(offsets, dtype=torch.float64)
    exponents = torch.arange(0, dim, 2, dtype=offsets.dtype) / dim
    angles = offsets[..., None] / (ENCODING_BASE**exponents)
    out = torch.empty(offsets.shape + (dim,), dtype=offsets.dtype)
    out[..., 0::2] = torch.sin(angles)
    out[..., 1::2] = torch.cos(angles)
    return out


def sample_initial(mu: torch.Tensor, sigma: torch.Tensor, generator: torch.Generator | None = None) -> torch.Tensor:
    """Reparameterized draw z = mu + sigma * eps with eps standard normal."""
    eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
    return mu + sigma * eps


class SpatioTemporalEncoder(nn.Module):
    """Posterior over latent initial states of agents and directed edges.

    Parameters
    ----------
    n_features : covariate dimension of the panel.
    hidden_dim : width of the message-passing representation.
    latent_dim : dimension d of each latent initial state.
    n_layers : number of attention rounds over the observation graph.
    nonlinearity : "relu" or "tanh", applied to aggregated messages.
    """

    def __init__(
        self,
        n_features: int,
        hidden_dim: int = 64,
        latent_dim: int = 20,
        n_layers: int = 1,
        nonlinearity: str = "relu",
    ):
        super().__init__()
        if nonlinearity not in _ACTIVATIONS:
            raise ConfigError(f"unknown nonlinearity {nonlinearity!r}")
        if n_layers < 1:
            raise ConfigError("need at least one attention layer")
        self.hidden_dim = hidden_dim
        self.latent_dim = latent_dim
        self.nonlinearity = nonlinearity
        self.input_proj = nn.Linear(n_features, hidden_dim)
        self.w_query = nn.ModuleList(nn.Linear(hidden_dim, hidden_dim, bias=False) for _ in range(n_layers))
        self.w_key = nn.ModuleList(nn.Linear(hidden_dim, hidden_dim, bias=False) for _ in range(n_layers))
        self.w_value = nn.ModuleList(nn.Linear(hidden_dim, hidden_dim, bias=False) for _ in range(n_layers))
        self.w_seq = nn.Linear(hidden_dim, hidden_dim, bias=False)
        self.posterior = nn.Sequential(
            nn.Linear(hidden_dim, hidden_dim // 2),
            nn.Tanh(),
            nn.Linear(hidden_dim // 2, 2 * latent_dim),
        )
        self.edge_init = nn.Linear(2 * latent_dim, latent_dim)
        self.double()

    def attend_layer(self, h: torch.Tensor, w: torch.Tensor, layer: int) -> torch.Tensor:
        """One round of attention over spatial and temporal in-edges.

        h : [B, O, N, H] vertex representations.
        w : [B, O, N, N] spatial weights, entry [b, t, j, i] for edge j -> i.
        """
        act = _ACTIVATIONS[self.nonlinearity]
        scale = 1.0 / math.sqrt(self.hidden_dim)
        query = self.w_query[layer](h)

        # Spatial senders share the receiver's timestamp, so their gap code
        # is TE(0); temporal senders sit one step earlier, gap code TE(-1).
        hat_spatial = h + temporal_encoding(0.0, self.hidden_dim)
        key_sp = self.w_key[layer](hat_spatial)
        val_sp = self.w_value[layer](hat_spatial)
        affinity = torch.einsum("bojh,boih->boji", key_sp, query) * scale
        messages = torch.einsum("boji,bojh->boih", w * affinity, val_sp)

        hat_temporal = h + temporal_encoding(-1.0, self.hidden_dim)
        key_tm = self.w_key[layer](hat_temporal)
        val_tm = self.w_value[layer](hat_temporal)
        affinity_tm = (key_tm[:, :-1] * query[:, 1:]).sum(-1) * scale
        msg_tm = affinity_tm[..., None] * val_tm[:, :-1]
        pad = torch.zeros_like(messages[:, :1])
        messages = messages + torch.cat([pad, msg_tm], dim=1)

        indegree = (w > 0).sum(dim=2)
        indegree = indegree + torch.cat(
            [torch.zeros_like(indegree[:, :1]), torch.ones_like(indegree[:, 1:])], dim=1
        )
        update = torch.where((indegree > 0)[..., None], act(messages), torch.zeros_like(messages))
        return h + update

    def pool_sequence(self, h: torch.Tensor) -> torch.Tensor:
        """Attention-weighted average over the window, h: [B, O, N, H]."""
        if h.shape[1] < 1:
            raise DomainError("cannot pool an empty window")
        steps = torch.arange(h.shape[1], dtype=h.dtype)
        hat = h + temporal_encoding(steps, self.hidden_dim)[None, :, None, :]
        anchor = torch.tanh(self.w_seq(hat.mean(dim=1)))  # [B, N, H]
        scores = torch.einsum("bnh,bonh->bon", anchor, hat)
        return (scores[..., None] * hat).mean(dim=1)

    def infer_posterior(self, u: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        out = self.posterior(u)
        mu, raw = out.chunk(2, dim=-1)
        return mu, nn.functional.softplus(raw)

    def edge_initial(self, z0: torch.Tensor) -> torch.Tensor:
        """Pairwise edge states from node states, z0: [B, N, d] -> [B, N, N, d].

        Entry [b, i, j] encodes the directed edge i -> j.
        """
        n = z0.shape[-2]
        zi = z0[:, :, None, :].expand(-1, -1, n, -1)
        zj = z0[:, None, :, :].expand(-1, n, -1, -1)
        return self.edge_init(torch.cat([zi, zj], dim=-1))

    def forward(self, x: torch.Tensor, w: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Posterior parameters for a batch of observation windows.

        x : [B, O, N, F] covariates, w : [B, O, N, N] adjacency.
        Returns (mu, sigma), each [B, N, latent_dim].
        """
        if x.ndim != 4 or w.ndim != 4 or x.shape[:3] != w.shape[:3]:
            raise DomainError(f"inconsistent window shapes {tuple(x.shape)} and {tuple(w.shape)}")
        h = self.input_proj(x)
        for layer in range(len(self.w_query)):
            h = self.attend_layer(h, w, layer)
        return self.infer_posterior(self.pool_sequence(h))

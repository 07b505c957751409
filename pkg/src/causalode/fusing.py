"""Treatment embedding and fusion into a single control vector per agent.

An active treatment k at time t is represented by its one-hot identity plus
a temporal code of the time elapsed since the current contiguous run of the
treatment began; a contraction matrix maps this raw vector to a compact
space. Simultaneous treatments are then fused by a small attention step
(or a plain mean when attention is disabled).
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .encoding import temporal_encoding
from .errors import DomainError


def run_starts(schedule: np.ndarray) -> np.ndarray:
    """Start step of the contiguous activity run covering each active entry.

    schedule : binary array [T, N, K]. Returns an integer array of the same
    shape; entry [t, i, k] is the first step of the run of 1s containing
    (t, i, k) when active, and t itself when inactive (unused downstream,
    since inactive entries embed to zero).
    """
    schedule = np.asarray(schedule)
    if schedule.ndim != 3:
        raise DomainError(f"schedule must be [T, N, K], got shape {schedule.shape}")
    t_total = schedule.shape[0]
    starts = np.empty(schedule.shape, dtype=np.int64)
    starts[0] = 0
    for t in range(1, t_total):
        continuing = (schedule[t] == 1) & (schedule[t - 1] == 1)
        starts[t] = np.where(continuing, starts[t - 1], t)
    return starts


def control_signals(schedule: np.ndarray, start: int, length: int) -> tuple[np.ndarray, np.ndarray]:
    """Activity flags and elapsed run times for a window of a schedule.

    Run starts are computed on the full schedule, so a treatment that began
    before the window keeps its clock. Returns float arrays
    (active, elapsed), each [length, N, K]; elapsed is 0 where inactive.
    """
    schedule = np.asarray(schedule)
    if not 0 <= start <= schedule.shape[0] - length:
        raise DomainError(
            f"window [{start}, {start + length}) falls outside schedule of {schedule.shape[0]} steps"
        )
    starts = run_starts(schedule)
    window = slice(start, start + length)
    active = schedule[window].astype(np.float64)
    t_abs = np.arange(start, start + length, dtype=np.float64)[:, None, None]
    elapsed = np.where(active > 0, t_abs - starts[window], 0.0)
    return active, elapsed


class TreatmentFuser(nn.Module):
    """Per-treatment embedding plus fusion of simultaneous treatments.

    Parameters
    ----------
    n_treatments : number K of treatment types.
    compact_dim : dimension of the fused control vector.
    attention : when False, fusion is a plain mean over the K embeddings.
    """

    def __init__(self, n_treatments: int, compact_dim: int = 5, attention: bool = True):
        super().__init__()
        if n_treatments < 1:
            raise DomainError("need at least one treatment type")
        self.n_treatments = n_treatments
        self.raw_dim = n_treatments + n_treatments % 2
        self.compact_dim = compact_dim
        self.attention = attention
        self.contraction = nn.Linear(self.raw_dim, compact_dim, bias=False)
        self.mixer = nn.Linear(compact_dim, compact_dim, bias=False)
        onehot = torch.zeros(n_treatments, self.raw_dim)
        onehot[torch.arange(n_treatments), torch.arange(n_treatments)] = 1.0
        self.register_buffer("onehot", onehot)
        self.double()

    def embed(self, active: torch.Tensor, elapsed: torch.Tensor) -> torch.Tensor:
        """Compact embeddings of each treatment, zero where inactive.

        active, elapsed : [..., K]. Returns [..., K, compact_dim].
        """
        raw = (self.onehot + temporal_encoding(elapsed, self.raw_dim)) * active[..., None]
        return self.contraction(raw)

    def fuse(self, compact: torch.Tensor) -> torch.Tensor:
        """Fuse the K compact embeddings, [..., K, d_o] -> [..., d_o]."""
        if not self.attention:
            return compact.mean(dim=-2)
        mix = torch.tanh(self.mixer(compact.mean(dim=-2)))
        weights = (compact * mix[..., None, :]).sum(-1)
        return (weights[..., None] * compact).mean(dim=-2)

    def forward(self, active: torch.Tensor, elapsed: torch.Tensor) -> torch.Tensor:
        return self.fuse(self.embed(active, elapsed))

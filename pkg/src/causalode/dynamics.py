"""Coupled latent dynamics for nodes and edges, integration, and decoding.

Node latents drift toward a graph-mixed transform of their own state fused
with the active-treatment control vector, pulled back by a linear term and
anchored to the initial state. Edge latents evolve from the incident node
pair plus a self term, and are read out as nonnegative mixing weights that
re-normalize the graph at every solver stage.

Integration is fixed-step RK4 on a grid `substeps` times denser than the
observation grid, with gradients either by backpropagation through the
steps (default) or by the adjoint method.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import torch
from torch import nn

from .errors import ConfigError, DivergenceError

_ACTIVATIONS = {"tanh": torch.tanh, "relu": torch.relu}

State = tuple[torch.Tensor, ...]


@dataclass(frozen=True)
class SolverConfig:
    """Fixed-step RK4 settings.

    substeps : micro-steps per observation interval.
    gradient_mode : "backprop" differentiates through the unrolled steps;
        "adjoint" solves the adjoint system backward instead, trading
        compute for memory.
    """

    substeps: int = 5
    gradient_mode: str = "backprop"

    def __post_init__(self):
        if self.substeps < 1:
            raise ConfigError("substeps must be at least 1")
        if self.gradient_mode not in ("backprop", "adjoint"):
            raise ConfigError(f"unknown gradient mode {self.gradient_mode!r}")


def rk4_step(func: Callable[[float, State], State], t: float, state: State, h: float) -> State:
    """One classic Runge-Kutta step of size h for a tuple-valued state."""
    k1 = func(t, state)
    k2 = func(t + h / 2, tuple(s + (h / 2) * k for s, k in zip(state, k1)))
    k3 = func(t + h / 2, tuple(s + (h / 2) * k for s, k in zip(state, k2)))
    k4 = func(t + h, tuple(s + h * k for s, k in zip(state, k3)))
    return tuple(
        s + (h / 6) * (a + 2 * b + 2 * c + d)
        for s, a, b, c, d in zip(state, k1, k2, k3, k4)
    )


def rk4_solve(func, y0, t0: float, t1: float, n_steps: int):
    """Integrate dy/dt = func(t, y) from t0 to t1 in n_steps RK4 steps.

    Accepts a single tensor or a tuple of tensors; returns the final state
    in the same form.
    """
    if n_steps < 1:
        raise ConfigError("n_steps must be at least 1")
    single = torch.is_tensor(y0)
    state = (y0,) if single else tuple(y0)
    wrapped = (lambda t, s: (func(t, s[0]),)) if single else func
    h = (t1 - t0) / n_steps
    for i in range(n_steps):
        state = rk4_step(wrapped, t0 + i * h, state, h)
    return state[0] if single else state


_ROW_MASS_FLOOR = 1e-12


def row_normalize(weights: torch.Tensor) -> torch.Tensor:
    """Normalize each row of [..., N, N] weights to sum to 1.

    Rows with (near-)zero mass get a unit self-loop first, so the result is
    always row-stochastic and the division never sees a vanishing sum whose
    reciprocal would overflow in the backward pass.
    """
    n = weights.shape[-1]
    rowsum = weights.sum(dim=-1, keepdim=True)
    eye = torch.eye(n, dtype=weights.dtype).expand_as(weights)
    safe = torch.where(rowsum > _ROW_MASS_FLOOR, weights, eye)
    return safe / safe.sum(dim=-1, keepdim=True)


def _pairwise(z: torch.Tensor) -> torch.Tensor:
    """[..., N, d] -> [..., N, N, 2d] with entry [i, j] = [z_i, z_j]."""
    n = z.shape[-2]
    zi = z.unsqueeze(-2).expand(*z.shape[:-1], n, z.shape[-1])
    zj = z.unsqueeze(-3).expand(*z.shape[:-2], n, n, z.shape[-1])
    return torch.cat([zi, zj], dim=-1)


class LatentDynamics(nn.Module):
    """Drift heads for node and edge latents.

    latent_dim : dimension d of node and edge latents.
    control_dim : dimension of the fused treatment vector.
    nonlinearity : squashing applied to the graph-mixed node term.
    """

    def __init__(self, latent_dim: int, control_dim: int, nonlinearity: str = "tanh"):
        super().__init__()
        if nonlinearity not in _ACTIVATIONS:
            raise ConfigError(f"unknown nonlinearity {nonlinearity!r}")
        self.nonlinearity = nonlinearity
        self.node_merge = nn.Linear(latent_dim + control_dim, latent_dim, bias=False)
        self.edge_pair = nn.Linear(2 * latent_dim, latent_dim)
        self.edge_self = nn.Linear(latent_dim, latent_dim)
        self.edge_to_weight = nn.Linear(latent_dim, 1)
        self.double()

    def edge_weights(self, edge_latents: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Raw and row-normalized mixing weights from edge latents.

        edge_latents : [..., N, N, d]. Returns (W_A, normalized W_A), both
        [..., N, N]; entry [i, j] weights edge i -> j.
        """
        raw = nn.functional.softplus(self.edge_to_weight(edge_latents).squeeze(-1))
        return raw, row_normalize(raw)

    def node_drift(
        self,
        z: torch.Tensor,
        z0: torch.Tensor,
        control: torch.Tensor,
        mixing: torch.Tensor,
    ) -> torch.Tensor:
        """dZ/dt = act(mixing @ merge([Z, control])) - Z + Z0."""
        act = _ACTIVATIONS[self.nonlinearity]
        merged = self.node_merge(torch.cat([z, control], dim=-1))
        return act(mixing @ merged) - z + z0

    def edge_drift(self, z: torch.Tensor, edge_latents: torch.Tensor) -> torch.Tensor:
        """dE/dt for all edges from node states [..., N, d] and edge states."""
        return self.edge_pair(_pairwise(z)) + self.edge_self(edge_latents)


class _DriftFunc:
    """Evaluates the coupled drift at one solver stage.

    Stage time is carried as an exact (grid index, fraction) pair so the
    zero-order hold on treatment flags never suffers float drift.
    """

    def __init__(self, dynamics: LatentDynamics, control: Callable[[int, float], torch.Tensor]):
        self.dynamics = dynamics
        self.control = control

    def __call__(self, grid: int, frac: float, z: torch.Tensor, e: torch.Tensor, z0: torch.Tensor):
        o = self.control(grid, frac)
        _, mixing = self.dynamics.edge_weights(e)
        dz = self.dynamics.node_drift(z, z0, o, mixing)
        de = self.dynamics.edge_drift(z, e)
        return dz, de


def _stage_times(micro: int, substeps: int) -> tuple[tuple[int, float], tuple[int, float], tuple[int, float]]:
    """Exact (grid, frac) stage times for the RK4 step starting at micro-step `micro`."""
    start = (micro // substeps, (micro % substeps) / substeps)
    mid = (start[0], start[1] + 0.5 / substeps)
    end = ((micro + 1) // substeps, ((micro + 1) % substeps) / substeps)
    return start, mid, end


def _integrate_plain(drift: _DriftFunc, z0, e0, n_grid: int, substeps: int):
    h = 1.0 / substeps
    z, e = z0, e0
    z_out, e_out = [z0], [e0]
    for micro in range((n_grid - 1) * substeps):
        start, mid, end = _stage_times(micro, substeps)
        k1 = drift(*start, z, e, z0)
        k2 = drift(*mid, z + (h / 2) * k1[0], e + (h / 2) * k1[1], z0)
        k3 = drift(*mid, z + (h / 2) * k2[0], e + (h / 2) * k2[1], z0)
        k4 = drift(*end, z + h * k3[0], e + h * k3[1], z0)
        z = z + (h / 6) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        e = e + (h / 6) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        if not (torch.isfinite(z).all() and torch.isfinite(e).all()):
            raise DivergenceError(
                f"non-finite latent state at micro-step {micro + 1} "
                f"(grid segment {micro // substeps})",
                step=micro + 1,
            )
        if (micro + 1) % substeps == 0:
            z_out.append(z)
            e_out.append(e)
    return torch.stack(z_out), torch.stack(e_out)


class _AdjointIntegrate(torch.autograd.Function):
    """RK4 forward pass without a graph; gradients via the adjoint system.

    The backward pass re-integrates each observation segment in reverse,
    carrying adjoint states for nodes, edges and every captured parameter.
    """

    @staticmethod
    def forward(ctx, z0, e0, drift, n_grid, substeps, *params):
        with torch.no_grad():
            z_traj, e_traj = _integrate_plain(drift, z0, e0, n_grid, substeps)
        ctx.drift = drift
        ctx.substeps = substeps
        ctx.save_for_backward(z_traj, e_traj, *params)
        return z_traj, e_traj

    @staticmethod
    def backward(ctx, grad_z_traj, grad_e_traj):
        z_traj, e_traj, *params = ctx.saved_tensors
        drift, substeps = ctx.drift, ctx.substeps
        n_grid = z_traj.shape[0]
        h = 1.0 / substeps
        z0 = z_traj[0]

        def vjp(stage, z, e, adj_z, adj_e):
            with torch.enable_grad():
                z_in = z.detach().requires_grad_(True)
                e_in = e.detach().requires_grad_(True)
                z0_in = z0.detach().requires_grad_(True)
                dz, de = drift(*stage, z_in, e_in, z0_in)
                grads = torch.autograd.grad(
                    (dz, de),
                    (z_in, e_in, z0_in) + tuple(params),
                    (adj_z, adj_e),
                    allow_unused=True,
                )
            return [
                g if g is not None else torch.zeros_like(ref)
                for g, ref in zip(grads, (z_in, e_in, z0_in) + tuple(params))
            ]

        def aug_deriv(stage, state):
            z, e, adj_z, adj_e = state[0], state[1], state[2], state[3]
            dz, de = drift(*stage, z, e, z0)
            grads = vjp(stage, z, e, adj_z, adj_e)
            return (dz, de, -grads[0], -grads[1], -grads[2], *[-g for g in grads[3:]])

        adj_z = grad_z_traj[-1]
        adj_e = grad_e_traj[-1]
        adj_z0 = torch.zeros_like(z0)
        adj_params = [torch.zeros_like(p) for p in params]

        with torch.no_grad():
            for seg in range(n_grid - 1, 0, -1):
                state = (z_traj[seg], e_traj[seg], adj_z, adj_e, adj_z0, *adj_params)
                for local in range(substeps - 1, -1, -1):
                    micro = (seg - 1) * substeps + local
                    start, mid, end = _stage_times(micro, substeps)
                    # Step backward from the micro-interval's end to its start.
                    k1 = aug_deriv(end, state)
                    s2 = tuple(s - (h / 2) * k for s, k in zip(state, k1))
                    k2 = aug_deriv(mid, s2)
                    s3 = tuple(s - (h / 2) * k for s, k in zip(state, k2))
                    k3 = aug_deriv(mid, s3)
                    s4 = tuple(s - h * k for s, k in zip(state, k3))
                    k4 = aug_deriv(start, s4)
                    state = tuple(
                        s - (h / 6) * (a + 2 * b + 2 * c + d)
                        for s, a, b, c, d in zip(state, k1, k2, k3, k4)
                    )
                _, _, adj_z, adj_e, adj_z0, *adj_params = state
                adj_z = adj_z + grad_z_traj[seg - 1]
                adj_e = adj_e + grad_e_traj[seg - 1]

        return (adj_z + adj_z0, adj_e, None, None, None, *adj_params)


def integrate(
    dynamics: LatentDynamics,
    control: Callable[[int, float], torch.Tensor],
    z0: torch.Tensor,
    e0: torch.Tensor,
    n_grid: int,
    solver: SolverConfig,
    extra_params: Sequence[torch.Tensor] = (),
) -> tuple[torch.Tensor, torch.Tensor]:
    """Advance latent states over n_grid observation points.

    control(grid_index, fraction) returns the fused treatment vector at the
    continuous time grid_index + fraction; flags are held constant between
    grid points while elapsed-time codes advance continuously.

    Returns (node trajectory [n_grid, ..., N, d], edge trajectory
    [n_grid, ..., N, N, d]); slice 0 is the initial state.

    extra_params lists tensors the control closure depends on, needed only
    in adjoint mode where gradients are accumulated explicitly.
    """
    if n_grid < 1:
        raise ConfigError("need at least one grid point")
    drift = _DriftFunc(dynamics, control)
    if solver.gradient_mode == "adjoint":
        params = tuple(p for p in dynamics.parameters() if p.requires_grad) + tuple(extra_params)
        return _AdjointIntegrate.apply(z0, e0, drift, n_grid, solver.substeps, *params)
    return _integrate_plain(drift, z0, e0, n_grid, solver.substeps)


class NodeDecoder(nn.Module):
    """Two-layer readout from a node latent to the outcome, hidden = d/2."""

    def __init__(self, latent_dim: int, out_dim: int = 1):
        super().__init__()
        hidden = max(latent_dim // 2, 1)
        self.net = nn.Sequential(nn.Linear(latent_dim, hidden), nn.Tanh(), nn.Linear(hidden, out_dim))
        self.double()

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.net(z)


class EdgeDecoder(nn.Module):
    """Two-layer readout from an ordered node pair to an edge weight."""

    def __init__(self, latent_dim: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(2 * latent_dim, latent_dim), nn.Tanh(), nn.Linear(latent_dim, 1)
        )
        self.double()

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        """z : [..., N, d] -> predicted weights [..., N, N]."""
        return self.net(_pairwise(z)).squeeze(-1)

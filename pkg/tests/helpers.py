"""Shared test utilities: finite-difference gradient oracles and a scalar
reimplementation of the tumor recurrence, kept independent of the package's
vectorized code paths."""

from __future__ import annotations

import math

import numpy as np
import torch


def fd_gradient(loss_fn, param: torch.Tensor, eps_scale: float = 1e-5) -> torch.Tensor:
    """Central finite-difference gradient of a scalar loss w.r.t. one tensor.

    ``loss_fn`` must be a deterministic zero-argument callable returning a
    float; the parameter is perturbed in place and restored.
    """
    grad = torch.zeros_like(param)
    flat = param.data.view(-1)
    gflat = grad.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        eps = eps_scale * max(1.0, abs(orig))
        flat[i] = orig + eps
        up = loss_fn()
        flat[i] = orig - eps
        down = loss_fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * eps)
    return grad


def relative_error(analytic: torch.Tensor, reference: torch.Tensor) -> float:
    """Max absolute difference over the reference tensor's own max magnitude."""
    diff = float((analytic - reference).abs().max())
    scale = float(reference.abs().max())
    return diff / max(scale, 1e-10)


def check_gradients(loss_fn, params, rtol: float, eps_scale: float = 1e-5) -> float:
    """Compare autograd gradients of loss_fn against central differences.

    ``params`` maps names to tensors (requires_grad). Returns the worst
    relative error; raises AssertionError naming the offending tensor.
    """
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    loss.backward()
    worst = 0.0
    for name, p in params.items():
        analytic = p.grad if p.grad is not None else torch.zeros_like(p)
        fd = fd_gradient(lambda: float(loss_fn().detach()), p, eps_scale)
        err = relative_error(analytic, fd)
        assert err < rtol, f"gradient mismatch for {name}: rel err {err:.3e} >= {rtol}"
        worst = max(worst, err)
    return worst


def scalar_tumor_replay(trace, treatments: np.ndarray) -> list[list[float]]:
    """Re-run the volume recurrence with plain Python floats.

    Follows the per-region update
        V(t+1) = (1 + rho ln(K/V) - beta_c C - (alpha_r d + beta_r d^2) + e) V
                 + mean_j(iota_c C_j) + mean_j(iota_r d_j + iota_r d_j^2)
                 + mean_j(kappa V_j)
    over in-graph neighbors j, clipped below at the volume floor, with the
    chemo concentration chain C(t) = C(t-1)/2 + dose * A_chemo(t).
    """
    config = trace.config
    t_total, n = trace.volumes.shape
    neighbors = [
        [j for j in range(n) if trace.adjacency[i][j] > 0] for i in range(n)
    ]
    vols = [[0.0] * n for _ in range(t_total)]
    vols[0] = [float(v) for v in trace.volumes[0]]
    conc_prev = [0.0] * n
    for t in range(t_total):
        conc = [
            conc_prev[i] / 2.0 + config.chemo_dose * float(treatments[t][i][0])
            for i in range(n)
        ]
        dose = [config.radio_dose * float(treatments[t][i][1]) for i in range(n)]
        if t + 1 < t_total:
            for i in range(n):
                v = vols[t][i]
                p = trace.params
                own = (
                    1.0
                    + float(p.growth_rate[i]) * math.log(float(p.carrying_capacity[i]) / v)
                    - float(p.chemo_sensitivity[i]) * conc[i]
                    - (float(p.radio_alpha[i]) * dose[i] + float(p.radio_beta[i]) * dose[i] ** 2)
                    + float(trace.noise[t][i])
                ) * v
                spill = 0.0
                if neighbors[i]:
                    deg = len(neighbors[i])
                    spill += sum(config.chemo_interference * conc[j] for j in neighbors[i]) / deg
                    spill += sum(
                        config.radio_interference * dose[j] + config.radio_interference * dose[j] ** 2
                        for j in neighbors[i]
                    ) / deg
                    spill += sum(config.neighbor_coupling * vols[t][j] for j in neighbors[i]) / deg
                vols[t + 1][i] = max(own + spill, config.volume_floor)
        conc_prev = conc
    return vols

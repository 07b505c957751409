"""Observation panels: validated containers for multi-agent treatment data.

A panel holds everything observed about one closed system of interacting
agents over a regular time grid: per-agent covariates, a time-varying
weighted interaction graph, binary treatment flags, and the outcome series
the model is asked to forecast.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DomainError, EmptySplitError, SchemaError

_MAGIC = b"OPANEL01"


def _as_float_array(name: str, arr, ndim: int) -> np.ndarray:
    out = np.asarray(arr, dtype=np.float64)
    if out.ndim != ndim:
        raise SchemaError(f"{name} must be {ndim}-dimensional, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise SchemaError(f"{name} contains non-finite values")
    return out


@dataclass(frozen=True)
class ObservationPanel:
    """One system of agents observed on a shared time grid.

    Parameters
    ----------
    covariates : array of shape [n_agents, n_steps, n_covariates]
        Per-agent input features, outcome included if desired.
    adjacency : array of shape [n_steps, n_agents, n_agents]
        Nonnegative edge weights; entry ``[t, j, i]`` weights the influence
        of sender ``j`` on receiver ``i`` at step ``t``.
    treatments : array of shape [n_steps, n_agents, n_treatments]
        Binary treatment flags.
    outcomes : array of shape [n_agents, n_steps, n_outcomes]
        Target series to forecast.
    step_size : float
        Grid spacing in time units (days for the bundled datasets).
    agent_names, treatment_names : sequences of str, optional
        Human-readable labels; defaulted to positional names.
    """

    covariates: np.ndarray
    adjacency: np.ndarray
    treatments: np.ndarray
    outcomes: np.ndarray
    step_size: float = 1.0
    agent_names: tuple[str, ...] = field(default=())
    treatment_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        x = _as_float_array("covariates", self.covariates, 3)
        w = _as_float_array("adjacency", self.adjacency, 3)
        a = _as_float_array("treatments", self.treatments, 3)
        y = _as_float_array("outcomes", self.outcomes, 3)

        n, t = x.shape[0], x.shape[1]
        if t < 2:
            raise SchemaError(f"panels need at least 2 time steps, got {t}")
        if w.shape != (t, n, n):
            raise SchemaError(f"adjacency shape {w.shape} does not match [T={t}, N={n}, N={n}]")
        if a.shape[:2] != (t, n):
            raise SchemaError(f"treatments shape {a.shape} does not match [T={t}, N={n}, K]")
        if y.shape[:2] != (n, t):
            raise SchemaError(f"outcomes shape {y.shape} does not match [N={n}, T={t}, d]")
        if np.any(w < 0):
            raise SchemaError("adjacency weights must be nonnegative")
        if not np.all((a == 0) | (a == 1)):
            raise SchemaError("treatment flags must be 0 or 1")
        if not self.step_size > 0:
            raise SchemaError("step_size must be positive")

        agents = tuple(self.agent_names) or tuple(f"agent_{i}" for i in range(n))
        treats = tuple(self.treatment_names) or tuple(f"treatment_{k}" for k in range(a.shape[2]))
        if len(agents) != n:
            raise SchemaError(f"got {len(agents)} agent names for {n} agents")
        if len(treats) != a.shape[2]:
            raise SchemaError(f"got {len(treats)} treatment names for {a.shape[2]} treatments")

        for name, arr in (("covariates", x), ("adjacency", w), ("treatments", a), ("outcomes", y)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "agent_names", agents)
        object.__setattr__(self, "treatment_names", treats)

    @property
    def n_agents(self) -> int:
        return self.covariates.shape[0]

    @property
    def n_steps(self) -> int:
        return self.covariates.shape[1]

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[2]

    @property
    def n_treatments(self) -> int:
        return self.treatments.shape[2]

    @property
    def n_outcomes(self) -> int:
        return self.outcomes.shape[2]

    def with_treatments(self, treatments: np.ndarray) -> "ObservationPanel":
        """Return a copy of this panel with the treatment schedule replaced."""
        return ObservationPanel(
            covariates=self.covariates,
            adjacency=self.adjacency,
            treatments=np.array(treatments, dtype=np.float64),
            outcomes=self.outcomes,
            step_size=self.step_size,
            agent_names=self.agent_names,
            treatment_names=self.treatment_names,
        )


def interference_values(adjacency: np.ndarray, treatments: np.ndarray) -> np.ndarray:
    """Neighborhood treatment exposure from raw [T,N,N] and [T,N,K] arrays."""
    mask = (np.asarray(adjacency) > 0).astype(np.float64)  # [T, j, i]
    idx = np.arange(mask.shape[1])
    mask[:, idx, idx] = 0.0
    indeg = mask.sum(axis=1)  # [T, i]
    treated = np.einsum("tji,tjk->tik", mask, np.asarray(treatments, dtype=np.float64))
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(indeg[:, :, None] > 0, treated / indeg[:, :, None], 0.0)


def compute_interference(panel: ObservationPanel) -> np.ndarray:
    """Neighborhood treatment exposure per agent, step and treatment.

    Entry ``[t, i, k]`` is the fraction of agent ``i``'s in-neighbors (agents
    ``j != i`` with ``adjacency[t, j, i] > 0``) that receive treatment ``k``
    at step ``t``. Agents with no in-neighbors get 0.

    Returns
    -------
    array of shape [n_steps, n_agents, n_treatments], values in [0, 1].
    """
    return interference_values(panel.adjacency, panel.treatments)


@dataclass(frozen=True)
class Chunk:
    """A training window sliced out of a panel.

    Covers steps ``[start, start + obs_len + pred_len)``; the first
    ``obs_len`` steps are the conditioning window, the rest is the
    prediction target.
    """

    panel: ObservationPanel
    start: int
    obs_len: int
    pred_len: int

    def __post_init__(self):
        if self.obs_len < 1 or self.pred_len < 1:
            raise DomainError("obs_len and pred_len must be at least 1")
        if self.start < 0 or self.start + self.obs_len + self.pred_len > self.panel.n_steps:
            raise DomainError(
                f"chunk [{self.start}, {self.start + self.obs_len + self.pred_len}) "
                f"falls outside panel of {self.panel.n_steps} steps"
            )

    @property
    def pred_start(self) -> int:
        return self.start + self.obs_len

    @property
    def stop(self) -> int:
        return self.start + self.obs_len + self.pred_len


def split_panel(panel: ObservationPanel, obs_len: int, pred_len: int, interval: int) -> list[Chunk]:
    """Cut a panel into overlapping windows on a regular stride.

    Windows of ``obs_len + pred_len`` steps start at offsets
    ``0, interval, 2 * interval, ...``; exactly
    ``(n_steps - (obs_len + pred_len)) // interval + 1`` of them fit.

    Raises
    ------
    EmptySplitError
        If the panel is shorter than one full window.
    """
    if interval < 1:
        raise DomainError(f"interval must be at least 1, got {interval}")
    if obs_len < 1 or pred_len < 1:
        raise DomainError("obs_len and pred_len must be at least 1")
    window = obs_len + pred_len
    if window > panel.n_steps:
        raise EmptySplitError(
            f"window of {window} steps does not fit in a panel of {panel.n_steps} steps"
        )
    count = (panel.n_steps - window) // interval + 1
    return [Chunk(panel, j * interval, obs_len, pred_len) for j in range(count)]


@dataclass(frozen=True)
class NormStats:
    """Per-feature normalization fitted on training chunks.

    ``scale`` picks the value transform applied before the affine step:
    ``standard`` standardizes raw values; ``log-standard`` takes log1p
    first, which suits nonnegative quantities with multiplicative growth
    (values below zero clip to zero before the log).
    """

    cov_mean: np.ndarray
    cov_std: np.ndarray
    out_mean: np.ndarray
    out_std: np.ndarray
    scale: str = "standard"

    def _forward(self, x: np.ndarray) -> np.ndarray:
        if self.scale == "log-standard":
            return np.log1p(np.maximum(x, 0.0))
        return x

    def normalize_covariates(self, x: np.ndarray) -> np.ndarray:
        return (self._forward(x) - self.cov_mean) / self.cov_std

    def normalize_outcomes(self, y: np.ndarray) -> np.ndarray:
        return (self._forward(y) - self.out_mean) / self.out_std

    def denormalize_outcomes(self, y: np.ndarray) -> np.ndarray:
        raw = y * self.out_std + self.out_mean
        if self.scale == "log-standard":
            return np.expm1(raw)
        return raw

    def apply(self, panel: ObservationPanel) -> ObservationPanel:
        """Return the panel with covariates and outcomes normalized.

        Adjacency and treatments pass through untouched.
        """
        return ObservationPanel(
            covariates=self.normalize_covariates(panel.covariates),
            adjacency=panel.adjacency,
            treatments=panel.treatments,
            outcomes=self.normalize_outcomes(panel.outcomes),
            step_size=panel.step_size,
            agent_names=panel.agent_names,
            treatment_names=panel.treatment_names,
        )


def _stack_windows(chunks: Sequence[Chunk], attr: str) -> np.ndarray:
    cols = []
    for c in chunks:
        arr = getattr(c.panel, attr)[:, c.start : c.stop, :]
        cols.append(arr.reshape(-1, arr.shape[2]))
    return np.concatenate(cols, axis=0)


def fit_normalizer(chunks: Sequence[Chunk], scale: str = "standard") -> NormStats:
    """Fit per-feature center and spread over every cell of the given chunks.

    Constant features get spread 1 so normalization stays invertible.
    """
    if not chunks:
        raise DomainError("cannot fit a normalizer on zero chunks")
    if scale not in ("standard", "log-standard"):
        raise DomainError(f"scale must be standard or log-standard, got {scale!r}")
    probe = NormStats(0.0, 1.0, 0.0, 1.0, scale=scale)
    x = probe._forward(_stack_windows(chunks, "covariates"))
    y = probe._forward(_stack_windows(chunks, "outcomes"))
    cov_std = x.std(axis=0)
    out_std = y.std(axis=0)
    return NormStats(
        cov_mean=x.mean(axis=0),
        cov_std=np.where(cov_std > 0, cov_std, 1.0),
        out_mean=y.mean(axis=0),
        out_std=np.where(out_std > 0, out_std, 1.0),
        scale=scale,
    )


def flip_entries(treatments: np.ndarray, ratio: float, seed: int | Sequence[int]) -> np.ndarray:
    """Toggle a uniformly chosen fraction of treatment flags.

    Exactly ``round(ratio * treatments.size)`` entries are flipped, chosen
    without replacement by a generator seeded with ``seed``. ``ratio`` 0
    returns an identical copy.
    """
    if not 0.0 <= ratio <= 1.0:
        raise DomainError(f"flip ratio must lie in [0, 1], got {ratio}")
    flat = np.array(treatments, dtype=np.float64).reshape(-1)
    count = int(round(ratio * flat.size))
    if count:
        rng = np.random.default_rng(seed)
        idx = rng.choice(flat.size, size=count, replace=False)
        flat[idx] = 1.0 - flat[idx]
    return flat.reshape(treatments.shape)


def flip_treatments(panel: ObservationPanel, ratio: float, seed: int) -> ObservationPanel:
    """Return a panel whose treatment schedule has a fraction of flags flipped."""
    return panel.with_treatments(flip_entries(panel.treatments, ratio, seed))


# Binary container layout (all integers little-endian):
#
#   offset  size  contents
#   0       8     magic "OPANEL01"
#   8       4     uint32 n_agents (N)
#   12      4     uint32 n_steps (T)
#   16      4     uint32 n_covariates (d1)
#   20      4     uint32 n_treatments (K)
#   24      4     uint32 n_outcomes (d2)
#   28      8     float64 step_size
#   36      4     uint32 byte length L of the names blob
#   40      L     UTF-8 JSON {"agents": [...], "treatments": [...]}
#   40+L    ...   four float64 little-endian C-order blocks, in order:
#                 covariates [N,T,d1], adjacency [T,N,N],
#                 treatments [T,N,K], outcomes [N,T,d2]

_HEADER = struct.Struct("<5IdI")


def save_panel(panel: ObservationPanel, path: str | Path) -> None:
    """Write a panel to the binary container format documented in this module."""
    names = json.dumps(
        {"agents": list(panel.agent_names), "treatments": list(panel.treatment_names)}
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(
            _HEADER.pack(
                panel.n_agents,
                panel.n_steps,
                panel.n_covariates,
                panel.n_treatments,
                panel.n_outcomes,
                panel.step_size,
                len(names),
            )
        )
        fh.write(names)
        for arr in (panel.covariates, panel.adjacency, panel.treatments, panel.outcomes):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_panel(path: str | Path) -> ObservationPanel:
    """Read a panel written by :func:`save_panel`.

    Raises
    ------
    SchemaError
        On a bad magic string, truncated file, or trailing bytes.
    """
    raw = Path(path).read_bytes()
    if raw[: len(_MAGIC)] != _MAGIC:
        raise SchemaError(f"{path}: not a panel container (bad magic)")
    base = len(_MAGIC)
    try:
        n, t, d1, k, d2, step_size, name_len = _HEADER.unpack_from(raw, base)
    except struct.error as exc:
        raise SchemaError(f"{path}: truncated header") from exc
    offset = base + _HEADER.size
    try:
        names = json.loads(raw[offset : offset + name_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SchemaError(f"{path}: corrupt names blob") from exc
    offset += name_len

    blocks = []
    for shape in ((n, t, d1), (t, n, n), (t, n, k), (n, t, d2)):
        size = int(np.prod(shape)) * 8
        if offset + size > len(raw):
            raise SchemaError(f"{path}: truncated data block")
        blocks.append(np.frombuffer(raw, dtype="<f8", count=size // 8, offset=offset).reshape(shape))
        offset += size
    if offset != len(raw):
        raise SchemaError(f"{path}: {len(raw) - offset} trailing bytes")

    return ObservationPanel(
        covariates=blocks[0],
        adjacency=blocks[1],
        treatments=blocks[2],
        outcomes=blocks[3],
        step_size=step_size,
        agent_names=tuple(names["agents"]),
        treatment_names=tuple(names["treatments"]),
    )


def save_cohort(panels: Sequence[ObservationPanel], directory: str | Path, manifest: dict | None = None) -> None:
    """Write a set of panels plus a manifest.json into a directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, panel in enumerate(panels):
        name = f"panel_{i:04d}.opanel"
        save_panel(panel, directory / name)
        entries.append(name)
    doc = dict(manifest or {})
    doc["panels"] = entries
    (directory / "manifest.json").write_text(json.dumps(doc, indent=2) + "\n")


def load_cohort(directory: str | Path) -> list[ObservationPanel]:
    """Load every panel listed in a cohort directory's manifest."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise SchemaError(f"{directory}: no manifest.json")
    doc = json.loads(manifest_path.read_text())
    return [load_panel(directory / name) for name in doc["panels"]]


def load_manifest(directory: str | Path) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise SchemaError(f"{directory}: no manifest.json")
    return json.loads(path.read_text())

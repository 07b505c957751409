"""Synthetic multi-region tumor cohorts with treatment interference.

Each patient is a small graph of tumor regions evolving by a discrete
log-growth recurrence. Chemotherapy concentration and radiotherapy dose
act on their own region and leak to graph neighbors, neighbor volumes
couple weakly, and treatment assignment is confounded: the larger the
recent tumor diameter, the likelier a region is to be treated.

Simulation keeps a full trace (parameters, noise, dose chains) so that
counterfactual outcomes under an edited treatment schedule can be replayed
exactly, sharing every arithmetic step with the factual run.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DomainError, SchemaError
from .panel import ObservationPanel, load_cohort, load_manifest, save_cohort


@dataclass(frozen=True)
class ParamPriors:
    """Sampling priors for per-region growth parameters.

    Defaults follow the PK-PD simulation lineage this generator is modeled
    on; they are starting points, not measured constants. Draws for the
    rate parameters are truncated at zero by resampling so that every
    region satisfies the nonnegativity invariants.

    carrying_capacity_diameter: largest supportable tumor diameter in cm;
        the capacity is the volume of a sphere of this diameter.
    growth_rate_*: normal prior on the log-growth coefficient.
    chemo_sensitivity_*: normal prior on the chemotherapy kill coefficient.
    radio_alpha_*: normal prior on the linear radiotherapy coefficient; the
        quadratic one is radio_alpha / radio_alpha_beta_ratio.
    subgroup_scales: multiplier applied to the chemo and radio prior means
        for patient subgroups 1..3.
    initial_diameter_range: uniform prior on the starting diameter in cm.
    """

    carrying_capacity_diameter: float = 30.0
    growth_rate_mean: float = 7.0e-5
    growth_rate_std: float = 7.23e-3
    chemo_sensitivity_mean: float = 0.028
    chemo_sensitivity_std: float = 0.0007
    radio_alpha_mean: float = 0.0398
    radio_alpha_std: float = 0.168
    radio_alpha_beta_ratio: float = 10.0
    subgroup_scales: tuple[float, float, float] = (0.9, 1.0, 1.1)
    initial_diameter_range: tuple[float, float] = (1.0, 6.0)


@dataclass(frozen=True)
class RegionParams:
    """Growth parameters for every region of one patient."""

    carrying_capacity: np.ndarray
    growth_rate: np.ndarray
    chemo_sensitivity: np.ndarray
    radio_alpha: np.ndarray
    radio_beta: np.ndarray
    subgroup: int

    def __post_init__(self):
        if not np.all(self.carrying_capacity > 0):
            raise DomainError("carrying capacity must be positive")
        for name in ("growth_rate", "chemo_sensitivity", "radio_alpha", "radio_beta"):
            if np.any(getattr(self, name) < 0):
                raise DomainError(f"{name} must be nonnegative")
        if self.subgroup not in (1, 2, 3):
            raise DomainError(f"subgroup must be 1, 2 or 3, got {self.subgroup}")


@dataclass(frozen=True)
class CohortConfig:
    """Knobs for one simulated cohort; see ParamPriors for priors."""

    n_patients: int
    n_regions: int = 15
    edge_count_range: tuple[int, int] = (22, 45)
    chemo_interference: float = 0.01
    radio_interference: float = 0.01
    neighbor_coupling: float = 0.001
    noise_std: float = 0.01
    horizon: int = 60
    seed: int = 0
    chemo_dose: float = 5.0
    radio_dose: float = 2.0
    assign_gamma: float = 2.0
    assign_offset: float | None = None  # defaults to diameter_max / 2
    diameter_max: float = 13.0
    diameter_window: int = 15
    volume_floor: float = 1e-6
    enable_treatments: bool = True
    priors: ParamPriors = field(default_factory=ParamPriors)

    def __post_init__(self):
        if self.n_patients < 1 or self.n_regions < 1:
            raise ConfigError("need at least one patient and one region")
        if self.horizon < 2:
            raise ConfigError("horizon must be at least 2 steps")
        if min(self.chemo_interference, self.radio_interference, self.neighbor_coupling) < 0:
            raise ConfigError("interference and coupling strengths must be nonnegative")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be nonnegative")
        if not self.volume_floor > 0:
            raise ConfigError("volume_floor must be positive")
        _check_edge_range(self.n_regions, self.edge_count_range)

    @property
    def offset(self) -> float:
        return self.diameter_max / 2 if self.assign_offset is None else self.assign_offset

    @classmethod
    def long_range(cls, n_patients: int, **overrides) -> "CohortConfig":
        """Variant with fewer regions, sparser graphs and a longer horizon."""
        base = dict(n_regions=5, edge_count_range=(6, 10), horizon=120)
        base.update(overrides)
        return cls(n_patients=n_patients, **base)


def scale_edge_range(base: CohortConfig, n_regions: int) -> tuple[int, int]:
    """Edge budget for ``n_regions`` at roughly ``base``'s graph density.

    Always feasible: clamped to [1, n(n-1)/2] (0 for a single region).
    """
    base_max = base.n_regions * (base.n_regions - 1) // 2
    max_edges = n_regions * (n_regions - 1) // 2
    lo, hi = base.edge_count_range
    scaled_lo = min(max_edges, max(1, round(lo * max_edges / base_max)))
    scaled_hi = min(max_edges, max(scaled_lo, round(hi * max_edges / base_max)))
    return (scaled_lo, scaled_hi)


def _check_edge_range(n_regions: int, edge_range: tuple[int, int]) -> None:
    lo, hi = edge_range
    max_edges = n_regions * (n_regions - 1) // 2
    if lo < 0 or lo > hi or hi > max_edges:
        raise ConfigError(
            f"edge count range {edge_range} is infeasible for {n_regions} regions "
            f"(at most {max_edges} undirected edges)"
        )


def diameter_from_volume(volume: np.ndarray) -> np.ndarray:
    """Sphere diameter in cm from volume in cm^3."""
    return np.cbrt(6.0 * np.asarray(volume) / np.pi)


def volume_from_diameter(diameter: np.ndarray) -> np.ndarray:
    return (np.pi / 6.0) * np.asarray(diameter) ** 3


def build_region_graph(n_regions: int, edge_count_range: tuple[int, int], seed) -> np.ndarray:
    """Sample a static undirected region graph with unit edge weights.

    The edge count is drawn uniformly from ``edge_count_range`` (inclusive),
    then that many distinct vertex pairs are chosen without replacement.
    """
    _check_edge_range(n_regions, edge_count_range)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n_edges = int(rng.integers(edge_count_range[0], edge_count_range[1] + 1))
    rows, cols = np.triu_indices(n_regions, k=1)
    adj = np.zeros((n_regions, n_regions))
    if n_edges:
        picked = rng.choice(rows.size, size=n_edges, replace=False)
        adj[rows[picked], cols[picked]] = 1.0
        adj[cols[picked], rows[picked]] = 1.0
    return adj


def decay_chemo(concentration, dose):
    """One day of chemo kinetics: half-life decay plus the new dose."""
    concentration = np.asarray(concentration, dtype=np.float64)
    dose = np.asarray(dose, dtype=np.float64)
    if np.any(concentration < 0) or np.any(dose < 0):
        raise DomainError("chemo concentration and dose must be nonnegative")
    return concentration / 2.0 + dose


def step_volume(
    volumes: np.ndarray,
    params: RegionParams,
    chemo_conc: np.ndarray,
    radio_dose: np.ndarray,
    adjacency: np.ndarray,
    noise: np.ndarray,
    chemo_interference: float,
    radio_interference: float,
    neighbor_coupling: float,
    volume_floor: float = 1e-6,
) -> np.ndarray:
    """Advance region volumes by one day.

    Own-region growth follows a log-growth factor diminished by the chemo
    concentration and the linear-quadratic radiotherapy effect, perturbed
    by noise. Neighbor terms add the average neighbor chemo concentration,
    radiotherapy effect and volume, each with its own small coefficient.
    Results are clipped below at ``volume_floor``.
    """
    v = np.asarray(volumes, dtype=np.float64)
    if np.any(v <= 0):
        raise DomainError("volumes must be positive")
    c = np.asarray(chemo_conc, dtype=np.float64)
    d = np.asarray(radio_dose, dtype=np.float64)

    factor = (
        1.0
        + params.growth_rate * np.log(params.carrying_capacity / v)
        - params.chemo_sensitivity * c
        - (params.radio_alpha * d + params.radio_beta * d**2)
        + np.asarray(noise, dtype=np.float64)
    )
    own = factor * v

    degree = adjacency.sum(axis=1)
    safe_degree = np.where(degree > 0, degree, 1.0)
    neighbor = (
        chemo_interference * (adjacency @ c)
        + radio_interference * (adjacency @ (d + d**2))
        + neighbor_coupling * (adjacency @ v)
    ) / safe_degree
    neighbor = np.where(degree > 0, neighbor, 0.0)

    return np.maximum(own + neighbor, volume_floor)


def assignment_probability(trailing_diameter: np.ndarray, config: CohortConfig) -> np.ndarray:
    """Treatment probability as a sigmoid in the recent average diameter."""
    z = config.assign_gamma * (np.asarray(trailing_diameter) - config.offset) / config.diameter_max
    return 1.0 / (1.0 + np.exp(-z))


def assign_treatments(trailing_diameter: np.ndarray, config: CohortConfig, rng: np.random.Generator):
    """Draw independent chemo and radio flags per region."""
    prob = assignment_probability(trailing_diameter, config)
    chemo = (rng.random(prob.shape) < prob).astype(np.float64)
    radio = (rng.random(prob.shape) < prob).astype(np.float64)
    return chemo, radio


def _truncated_normal(rng: np.random.Generator, mean: float, std: float, size: int) -> np.ndarray:
    """Normal draws resampled until nonnegative."""
    out = rng.normal(mean, std, size)
    for _ in range(1000):
        bad = out < 0
        if not bad.any():
            return out
        out[bad] = rng.normal(mean, std, int(bad.sum()))
    return np.maximum(out, 0.0)


def sample_region_params(priors: ParamPriors, n_regions: int, subgroup: int, rng: np.random.Generator) -> RegionParams:
    scale = priors.subgroup_scales[subgroup - 1]
    capacity = volume_from_diameter(priors.carrying_capacity_diameter)
    alpha = _truncated_normal(rng, scale * priors.radio_alpha_mean, priors.radio_alpha_std, n_regions)
    return RegionParams(
        carrying_capacity=np.full(n_regions, capacity),
        growth_rate=_truncated_normal(rng, priors.growth_rate_mean, priors.growth_rate_std, n_regions),
        chemo_sensitivity=_truncated_normal(
            rng, scale * priors.chemo_sensitivity_mean, priors.chemo_sensitivity_std, n_regions
        ),
        radio_alpha=alpha,
        radio_beta=alpha / priors.radio_alpha_beta_ratio,
        subgroup=subgroup,
    )


@dataclass(frozen=True)
class PatientTrace:
    """Everything needed to replay one patient's trajectory exactly."""

    params: RegionParams
    adjacency: np.ndarray
    volumes: np.ndarray  # [T, N]
    chemo_conc: np.ndarray  # [T, N]
    radio_dose: np.ndarray  # [T, N]
    noise: np.ndarray  # [T-1, N]
    config: CohortConfig


def _simulate_patient(config: CohortConfig, rng: np.random.Generator) -> tuple[ObservationPanel, PatientTrace]:
    n, t_total = config.n_regions, config.horizon
    subgroup = int(rng.integers(1, 4))
    params = sample_region_params(config.priors, n, subgroup, rng)
    adjacency = build_region_graph(n, config.edge_count_range, rng)

    lo, hi = config.priors.initial_diameter_range
    volumes = np.zeros((t_total, n))
    volumes[0] = volume_from_diameter(rng.uniform(lo, hi, n))

    diameters = np.zeros((t_total, n))
    chemo_conc = np.zeros((t_total, n))
    radio_dose = np.zeros((t_total, n))
    treatments = np.zeros((t_total, n, 2))
    noise = np.zeros((t_total - 1, n))

    c_prev = np.zeros(n)
    for t in range(t_total):
        diameters[t] = diameter_from_volume(volumes[t])
        window = diameters[max(0, t - config.diameter_window + 1) : t + 1]
        trailing = window.mean(axis=0)
        if config.enable_treatments:
            chemo_flag, radio_flag = assign_treatments(trailing, config, rng)
        else:
            chemo_flag = radio_flag = np.zeros(n)
        treatments[t, :, 0] = chemo_flag
        treatments[t, :, 1] = radio_flag
        chemo_conc[t] = decay_chemo(c_prev, config.chemo_dose * chemo_flag)
        radio_dose[t] = config.radio_dose * radio_flag
        c_prev = chemo_conc[t]
        if t + 1 < t_total:
            noise[t] = rng.normal(0.0, config.noise_std, n)
            volumes[t + 1] = step_volume(
                volumes[t],
                params,
                chemo_conc[t],
                radio_dose[t],
                adjacency,
                noise[t],
                config.chemo_interference,
                config.radio_interference,
                config.neighbor_coupling,
                config.volume_floor,
            )

    covariates = np.stack(
        [
            volumes.T,
            np.full((n, t_total), float(subgroup)),
            treatments[:, :, 0].T,
            treatments[:, :, 1].T,
        ],
        axis=2,
    )
    panel = ObservationPanel(
        covariates=covariates,
        adjacency=np.repeat(adjacency[None], t_total, axis=0),
        treatments=treatments,
        outcomes=volumes.T[:, :, None],
        agent_names=tuple(f"region_{i}" for i in range(n)),
        treatment_names=("chemo", "radio"),
    )
    trace = PatientTrace(params, adjacency, volumes, chemo_conc, radio_dose, noise, config)
    return panel, trace


@dataclass(frozen=True)
class SimulatedCohort:
    """Panels for every patient plus the traces needed to replay them."""

    panels: list[ObservationPanel]
    traces: list[PatientTrace]
    config: CohortConfig

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        manifest = {
            "kind": "pkpd-cohort",
            "config": _config_to_json(self.config),
            "traces": [f"trace_{i:04d}.npz" for i in range(len(self.traces))],
        }
        save_cohort(self.panels, directory, manifest)
        for name, trace in zip(manifest["traces"], self.traces):
            np.savez(
                directory / name,
                carrying_capacity=trace.params.carrying_capacity,
                growth_rate=trace.params.growth_rate,
                chemo_sensitivity=trace.params.chemo_sensitivity,
                radio_alpha=trace.params.radio_alpha,
                radio_beta=trace.params.radio_beta,
                subgroup=np.array(trace.params.subgroup),
                adjacency=trace.adjacency,
                volumes=trace.volumes,
                chemo_conc=trace.chemo_conc,
                radio_dose=trace.radio_dose,
                noise=trace.noise,
            )

    @classmethod
    def load(cls, directory: str | Path) -> "SimulatedCohort":
        directory = Path(directory)
        manifest = load_manifest(directory)
        if manifest.get("kind") != "pkpd-cohort":
            raise SchemaError(f"{directory}: manifest does not describe a simulated cohort")
        config = _config_from_json(manifest["config"])
        panels = load_cohort(directory)
        traces = []
        for name in manifest["traces"]:
            with np.load(directory / name) as data:
                params = RegionParams(
                    carrying_capacity=data["carrying_capacity"],
                    growth_rate=data["growth_rate"],
                    chemo_sensitivity=data["chemo_sensitivity"],
                    radio_alpha=data["radio_alpha"],
                    radio_beta=data["radio_beta"],
                    subgroup=int(data["subgroup"]),
                )
                traces.append(
                    PatientTrace(
                        params=params,
                        adjacency=data["adjacency"],
                        volumes=data["volumes"],
                        chemo_conc=data["chemo_conc"],
                        radio_dose=data["radio_dose"],
                        noise=data["noise"],
                        config=config,
                    )
                )
        return cls(panels=panels, traces=traces, config=config)


def _config_to_json(config: CohortConfig) -> dict:
    doc = dataclasses.asdict(config)
    doc["priors"] = dataclasses.asdict(config.priors)
    return doc


def _config_from_json(doc: dict) -> CohortConfig:
    doc = dict(doc)
    priors = doc.pop("priors")
    priors["subgroup_scales"] = tuple(priors["subgroup_scales"])
    priors["initial_diameter_range"] = tuple(priors["initial_diameter_range"])
    doc["edge_count_range"] = tuple(doc["edge_count_range"])
    return CohortConfig(priors=ParamPriors(**priors), **doc)


def simulate_cohort(config: CohortConfig) -> SimulatedCohort:
    """Simulate every patient in the cohort, one panel each.

    Patients get independent streams spawned from the cohort seed, so the
    cohort is deterministic as a whole and each patient individually.
    """
    children = np.random.SeedSequence(config.seed).spawn(config.n_patients)
    panels, traces = [], []
    for child in children:
        panel, trace = _simulate_patient(config, np.random.default_rng(child))
        panels.append(panel)
        traces.append(trace)
    return SimulatedCohort(panels=panels, traces=traces, config=config)


def counterfactual_outcomes(
    trace: PatientTrace,
    treatments: np.ndarray,
    start: int,
    n_steps: int,
) -> np.ndarray:
    """Replay a patient's volumes under an edited treatment schedule.

    The replay branches off the factual trajectory at ``start``: volumes and
    chemo concentration up to that step are taken from the trace, then the
    recurrence runs forward with the edited treatments and the factual noise
    draws. With an unedited schedule the result equals the factual volumes
    bit for bit.

    Parameters
    ----------
    treatments : array [T, N, 2]
        Full schedule; only entries at steps >= start influence the result.

    Returns
    -------
    array [N, n_steps, 1] of volumes at steps start .. start + n_steps - 1.
    """
    t_total, n = trace.volumes.shape
    if not 0 <= start < t_total or start + n_steps > t_total:
        raise DomainError(
            f"replay window [{start}, {start + n_steps}) falls outside the trace of {t_total} steps"
        )
    treatments = np.asarray(treatments, dtype=np.float64)
    if treatments.shape != (t_total, n, 2):
        raise SchemaError(f"treatment schedule shape {treatments.shape} does not match [{t_total}, {n}, 2]")

    config = trace.config
    out = np.zeros((n_steps, n))
    out[0] = trace.volumes[start]
    c_prev = trace.chemo_conc[start - 1] if start > 0 else np.zeros(n)
    for offset in range(n_steps - 1):
        t = start + offset
        conc = decay_chemo(c_prev, config.chemo_dose * treatments[t, :, 0])
        dose = config.radio_dose * treatments[t, :, 1]
        out[offset + 1] = step_volume(
            out[offset],
            trace.params,
            conc,
            dose,
            trace.adjacency,
            trace.noise[t],
            config.chemo_interference,
            config.radio_interference,
            config.neighbor_coupling,
            config.volume_floor,
        )
        c_prev = conc
    return out.T[:, :, None]

"""Declarative treatment interventions and what-if scenario execution.

A script is an ordered list of edits over a panel's treatment schedule:
remove activity, shift runs in time, reorder two treatments' start dates,
or set a window explicitly. Scenario execution encodes the factual
observation window once, then integrates the dynamics twice, under the
factual and the edited schedule, and reports both trajectories plus their
difference.

Script JSON format (one object per edit):
    {"op": "remove", "treatment": T, "agents": A, "window": [a, b]}
    {"op": "shift",  "treatment": T, "agents": A, "delta_days": D}
    {"op": "reorder","treatment": [T1, T2], "agents": A, "gap": G}
    {"op": "set",    "treatment": T, "agents": A, "window": [a, b], "value": V}
Treatments and agents are names or indices; "agents" may be omitted or
"all"; windows are half-open [a, b) day ranges; "window" may be omitted in
remove edits to mean the whole timeline.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .errors import DomainError, ScriptError
from .model import GraphODEModel, collate
from .panel import Chunk, NormStats, ObservationPanel


@dataclass(frozen=True)
class RemoveEdit:
    treatment: str | int
    agents: object = "all"
    window: tuple[int, int] | None = None


@dataclass(frozen=True)
class ShiftEdit:
    treatment: str | int
    delta_days: int
    agents: object = "all"


@dataclass(frozen=True)
class ReorderEdit:
    first: str | int
    second: str | int
    gap_days: int
    agents: object = "all"


@dataclass(frozen=True)
class SetEdit:
    treatment: str | int
    window: tuple[int, int]
    value: int
    agents: object = "all"


Edit = RemoveEdit | ShiftEdit | ReorderEdit | SetEdit

_ALLOWED_KEYS = {
    "remove": {"op", "treatment", "agents", "window"},
    "shift": {"op", "treatment", "agents", "delta_days"},
    "reorder": {"op", "treatment", "agents", "gap"},
    "set": {"op", "treatment", "agents", "window", "value"},
}


def _require(entry: dict, key: str, location: str):
    if key not in entry:
        raise ScriptError(f"missing key {key!r}", location=f"{location}.{key}")
    return entry[key]


def _parse_window(raw, location: str) -> tuple[int, int]:
    if (
        not isinstance(raw, (list, tuple))
        or len(raw) != 2
        or not all(isinstance(v, int) and not isinstance(v, bool) for v in raw)
    ):
        raise ScriptError(f"window must be two integers [start, stop), got {raw!r}", location=location)
    if raw[1] < raw[0]:
        raise ScriptError(f"window stop {raw[1]} precedes start {raw[0]}", location=location)
    return int(raw[0]), int(raw[1])


def parse_script(entries) -> list[Edit]:
    """Parse and structurally validate a script (a list of edit objects)."""
    if not isinstance(entries, list):
        raise ScriptError(f"script must be a list of edits, got {type(entries).__name__}", location="script")
    edits: list[Edit] = []
    for i, entry in enumerate(entries):
        location = f"script[{i}]"
        if not isinstance(entry, dict):
            raise ScriptError("each edit must be an object", location=location)
        op = _require(entry, "op", location)
        if op not in _ALLOWED_KEYS:
            raise ScriptError(f"unknown op {op!r}", location=f"{location}.op")
        extra = set(entry) - _ALLOWED_KEYS[op]
        if extra:
            raise ScriptError(f"unexpected keys {sorted(extra)} for op {op!r}", location=location)
        agents = entry.get("agents", "all")
        treatment = _require(entry, "treatment", location)
        if op == "remove":
            window = _parse_window(entry["window"], f"{location}.window") if "window" in entry else None
            edits.append(RemoveEdit(treatment=treatment, agents=agents, window=window))
        elif op == "shift":
            delta = _require(entry, "delta_days", location)
            if not isinstance(delta, int) or isinstance(delta, bool):
                raise ScriptError(f"delta_days must be an integer, got {delta!r}", location=f"{location}.delta_days")
            edits.append(ShiftEdit(treatment=treatment, agents=agents, delta_days=delta))
        elif op == "reorder":
            if not isinstance(treatment, (list, tuple)) or len(treatment) != 2:
                raise ScriptError(
                    "reorder needs treatment: [first, second]", location=f"{location}.treatment"
                )
            gap = _require(entry, "gap", location)
            if not isinstance(gap, int) or isinstance(gap, bool) or gap < 0:
                raise ScriptError(f"gap must be a nonnegative integer, got {gap!r}", location=f"{location}.gap")
            edits.append(ReorderEdit(first=treatment[0], second=treatment[1], gap_days=gap, agents=agents))
        else:
            window = _parse_window(_require(entry, "window", location), f"{location}.window")
            value = _require(entry, "value", location)
            if value not in (0, 1) or isinstance(value, bool):
                raise ScriptError(f"value must be 0 or 1, got {value!r}", location=f"{location}.value")
            edits.append(SetEdit(treatment=treatment, agents=agents, window=window, value=int(value)))
    return edits


def serialize_script(edits: Sequence[Edit]) -> list[dict]:
    """Inverse of parse_script; parse(serialize(s)) == s."""
    out = []
    for edit in edits:
        if isinstance(edit, RemoveEdit):
            entry = {"op": "remove", "treatment": edit.treatment, "agents": edit.agents}
            if edit.window is not None:
                entry["window"] = list(edit.window)
        elif isinstance(edit, ShiftEdit):
            entry = {"op": "shift", "treatment": edit.treatment, "agents": edit.agents,
                     "delta_days": edit.delta_days}
        elif isinstance(edit, ReorderEdit):
            entry = {"op": "reorder", "treatment": [edit.first, edit.second], "agents": edit.agents,
                     "gap": edit.gap_days}
        else:
            entry = {"op": "set", "treatment": edit.treatment, "agents": edit.agents,
                     "window": list(edit.window), "value": edit.value}
        out.append(entry)
    return out


def load_script(path: str | Path) -> list[Edit]:
    try:
        entries = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScriptError(f"{path}: not valid JSON ({exc})", location="script") from exc
    return parse_script(entries)


def _resolve_treatment(ref, names: Sequence[str], location: str) -> int:
    if isinstance(ref, bool):
        raise ScriptError(f"treatment reference must be a name or index, got {ref!r}", location=location)
    if isinstance(ref, int):
        if not 0 <= ref < len(names):
            raise ScriptError(f"treatment index {ref} out of range [0, {len(names)})", location=location)
        return ref
    if isinstance(ref, str):
        if ref in names:
            return list(names).index(ref)
        raise ScriptError(f"unknown treatment {ref!r}", location=location)
    raise ScriptError(f"treatment reference must be a name or index, got {ref!r}", location=location)


def _resolve_agents(ref, names: Sequence[str], location: str) -> list[int]:
    if ref is None or ref == "all":
        return list(range(len(names)))
    if not isinstance(ref, (list, tuple)):
        ref = [ref]
    out = []
    for j, item in enumerate(ref):
        where = f"{location}[{j}]"
        if isinstance(item, bool):
            raise ScriptError(f"agent reference must be a name or index, got {item!r}", location=where)
        if isinstance(item, int):
            if not 0 <= item < len(names):
                raise ScriptError(f"agent index {item} out of range [0, {len(names)})", location=where)
            out.append(item)
        elif isinstance(item, str):
            if item not in names:
                raise ScriptError(f"unknown agent {item!r}", location=where)
            out.append(list(names).index(item))
        else:
            raise ScriptError(f"agent reference must be a name or index, got {item!r}", location=where)
    return out


def _runs(column: np.ndarray) -> list[tuple[int, int]]:
    """Maximal [start, stop) runs of 1s in a binary vector."""
    padded = np.diff(np.concatenate([[0], column.astype(int), [0]]))
    starts = np.flatnonzero(padded == 1)
    stops = np.flatnonzero(padded == -1)
    return list(zip(starts.tolist(), stops.tolist()))


def _shift_column(column: np.ndarray, delta: int) -> np.ndarray:
    """Translate each activity run by delta days, clipping to the timeline."""
    t_total = column.shape[0]
    out = np.zeros_like(column)
    for start, stop in _runs(column):
        a = max(0, start + delta)
        b = min(t_total, stop + delta)
        if a < b:
            out[a:b] = 1.0
    return out


def apply_intervention(
    treatments: np.ndarray,
    edits: Sequence[Edit],
    treatment_names: Sequence[str],
    agent_names: Sequence[str],
) -> np.ndarray:
    """Apply script edits to a [T, N, K] schedule, returning a new array."""
    schedule = np.array(treatments, dtype=np.float64)
    t_total = schedule.shape[0]
    for i, edit in enumerate(edits):
        location = f"script[{i}]"
        agents = _resolve_agents(edit.agents, agent_names, f"{location}.agents")
        if isinstance(edit, RemoveEdit):
            k = _resolve_treatment(edit.treatment, treatment_names, f"{location}.treatment")
            a, b = edit.window if edit.window is not None else (0, t_total)
            a, b = max(0, a), min(t_total, b)
            schedule[a:b, agents, k] = 0.0
        elif isinstance(edit, ShiftEdit):
            k = _resolve_treatment(edit.treatment, treatment_names, f"{location}.treatment")
            for agent in agents:
                schedule[:, agent, k] = _shift_column(schedule[:, agent, k], edit.delta_days)
        elif isinstance(edit, ReorderEdit):
            ka = _resolve_treatment(edit.first, treatment_names, f"{location}.treatment")
            kb = _resolve_treatment(edit.second, treatment_names, f"{location}.treatment")
            for agent in agents:
                col_a, col_b = schedule[:, agent, ka], schedule[:, agent, kb]
                active_a, active_b = np.flatnonzero(col_a), np.flatnonzero(col_b)
                if active_a.size == 0 or active_b.size == 0:
                    continue
                target = int(min(active_a[0], active_b[0]))
                schedule[:, agent, ka] = _shift_column(col_a, target - int(active_a[0]))
                schedule[:, agent, kb] = _shift_column(col_b, target + edit.gap_days - int(active_b[0]))
        else:
            k = _resolve_treatment(edit.treatment, treatment_names, f"{location}.treatment")
            a, b = max(0, edit.window[0]), min(t_total, edit.window[1])
            schedule[a:b, agents, k] = float(edit.value)
    return schedule


@dataclass(frozen=True)
class ScenarioResult:
    """Factual and counterfactual forecasts for one scenario.

    Trajectories are [n_agents, horizon, n_outcomes] on the outcome scale;
    edited_schedule is the [horizon, N, K] slice actually driving the
    counterfactual integration.
    """

    factual: np.ndarray
    counterfactual: np.ndarray
    delta: np.ndarray
    edited_schedule: np.ndarray
    agent_names: tuple[str, ...]

    @property
    def per_agent_delta(self) -> np.ndarray:
        return self.delta.mean(axis=(1, 2))

    @property
    def mean_delta(self) -> float:
        return float(self.delta.mean())


def run_scenario(
    model: GraphODEModel,
    stats: NormStats,
    obs_len: int,
    panel: ObservationPanel,
    edits: Sequence[Edit],
    horizon: int,
    apply_to_observation: bool = False,
) -> ScenarioResult:
    """Forecast the panel factually and under the edited schedule.

    The panel's first obs_len steps condition the encoder; the next
    ``horizon`` steps are predicted. Edits touch only the prediction part
    of the schedule unless apply_to_observation is set; history stays
    factual by default. Both integrations start from the same posterior
    mean, so an empty script reproduces the factual trajectory bit for bit.
    """
    max_horizon = panel.n_steps - obs_len
    if not 1 <= horizon <= max_horizon:
        raise DomainError(f"horizon must lie in [1, {max_horizon}], got {horizon}")
    edited = apply_intervention(panel.treatments, edits, panel.treatment_names, panel.agent_names)
    merged = np.array(panel.treatments)
    start = 0 if apply_to_observation else obs_len
    merged[start:] = edited[start:]

    chunk = Chunk(panel, 0, obs_len, horizon)
    model.eval()
    with torch.no_grad():
        factual_out = model(collate([chunk], stats), sample=False)
        edited_out = model(collate([chunk], stats, schedules=[merged]), sample=False)
    factual = stats.denormalize_outcomes(factual_out.outcomes[:, 0].permute(1, 0, 2).numpy())
    counterfactual = stats.denormalize_outcomes(edited_out.outcomes[:, 0].permute(1, 0, 2).numpy())
    return ScenarioResult(
        factual=factual,
        counterfactual=counterfactual,
        delta=counterfactual - factual,
        edited_schedule=merged[obs_len : obs_len + horizon],
        agent_names=panel.agent_names,
    )


def emit_plot_data(result: ScenarioResult, path: str | Path) -> None:
    """Write per-day delta series: day, mean over agents, one column per agent."""
    per_day_agent = result.delta.mean(axis=2)  # [N, M]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["day", "mean_delta", *result.agent_names])
        for day in range(per_day_agent.shape[1]):
            writer.writerow(
                [day, per_day_agent[:, day].mean(), *per_day_agent[:, day]]
            )

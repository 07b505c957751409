"""Ingestion of regional epidemic data into an observation panel.

Three delimited text files describe the system: per-state daily covariates,
directed mobility flows between states, and dated policy intervals. States
become agents, mobility becomes the weighted graph, policies become binary
treatments held at 1 from their start through their end date inclusive.
"""

from __future__ import annotations

import csv
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from .errors import IngestionError, SchemaError
from .panel import ObservationPanel

COVARIATE_COLUMNS = (
    "confirmed",
    "deaths",
    "recovered",
    "active",
    "incident_rate",
    "mortality_rate",
    "testing_rate",
)

_COVARIATE_HEADER = ("state", "date") + COVARIATE_COLUMNS
_MOBILITY_HEADER = ("date", "src_state", "dst_state", "flow")
_POLICY_HEADER = ("state", "policy_id", "policy_name", "start_date", "end_date")


def _read_rows(path: str | Path, header: tuple[str, ...]) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            found = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if tuple(h.strip() for h in found) != header:
            raise SchemaError(f"{path}: header {found} does not match {list(header)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise SchemaError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            rows.append({key: cell.strip() for key, cell in zip(header, row)})
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return rows


def _parse_date(path, lineno_hint: str, text: str) -> date:
    try:
        return date.fromisoformat(text)
    except ValueError as exc:
        raise IngestionError(f"{path}: {lineno_hint}: bad date {text!r}") from exc


def _parse_float(path, cell_hint: str, text: str) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise IngestionError(f"{path}: {cell_hint}: bad number {text!r}") from exc


def load_covid_panel(
    covariate_path: str | Path,
    mobility_path: str | Path,
    policy_path: str | Path,
    outcome: str = "confirmed",
) -> ObservationPanel:
    """Assemble the three source files into one panel.

    Parameters
    ----------
    outcome : str
        Which covariate column the model forecasts; the outcome series
        aliases that column.

    Raises
    ------
    SchemaError
        Wrong headers, empty files, uneven date grid, inverted policy
        intervals, negative flows.
    IngestionError
        Missing or malformed (state, date) cells, unknown states or dates
        referenced by mobility or policy rows.
    """
    if outcome not in COVARIATE_COLUMNS:
        raise SchemaError(f"unknown outcome column {outcome!r}; pick one of {COVARIATE_COLUMNS}")

    cov_rows = _read_rows(covariate_path, _COVARIATE_HEADER)
    mob_rows = _read_rows(mobility_path, _MOBILITY_HEADER)
    pol_rows = _read_rows(policy_path, _POLICY_HEADER)

    states = sorted({row["state"] for row in cov_rows})
    dates = sorted({_parse_date(covariate_path, f"state {row['state']}", row["date"]) for row in cov_rows})
    if len(dates) < 2:
        raise SchemaError(f"{covariate_path}: need at least 2 distinct dates, got {len(dates)}")
    spacing = {(b - a).days for a, b in zip(dates, dates[1:])}
    if len(spacing) != 1:
        raise SchemaError(f"{covariate_path}: dates do not form a uniform grid (gaps of {sorted(spacing)} days)")
    step_days = spacing.pop()

    state_idx = {s: i for i, s in enumerate(states)}
    date_idx = {d: t for t, d in enumerate(dates)}
    n, t_total = len(states), len(dates)

    x = np.full((n, t_total, len(COVARIATE_COLUMNS)), np.nan)
    for row in cov_rows:
        i = state_idx[row["state"]]
        t = date_idx[_parse_date(covariate_path, f"state {row['state']}", row["date"])]
        if not np.isnan(x[i, t, 0]):
            raise IngestionError(f"{covariate_path}: duplicate cell (state={row['state']}, date={row['date']})")
        for c, col in enumerate(COVARIATE_COLUMNS):
            x[i, t, c] = _parse_float(covariate_path, f"(state={row['state']}, date={row['date']}, {col})", row[col])
    missing = np.argwhere(np.isnan(x[:, :, 0]))
    if missing.size:
        i, t = missing[0]
        raise IngestionError(f"{covariate_path}: missing cell (state={states[i]}, date={dates[t].isoformat()})")

    w = np.zeros((t_total, n, n))
    for row in mob_rows:
        d = _parse_date(mobility_path, f"src {row['src_state']}", row["date"])
        if d not in date_idx:
            raise IngestionError(f"{mobility_path}: date {d.isoformat()} not present in the covariate grid")
        for key in ("src_state", "dst_state"):
            if row[key] not in state_idx:
                raise IngestionError(f"{mobility_path}: unknown state {row[key]!r} (date={row['date']})")
        flow = _parse_float(mobility_path, f"(date={row['date']}, {row['src_state']}->{row['dst_state']})", row["flow"])
        if flow < 0:
            raise SchemaError(f"{mobility_path}: negative flow {flow} (date={row['date']})")
        w[date_idx[d], state_idx[row["src_state"]], state_idx[row["dst_state"]]] = flow

    policy_ids = sorted({row["policy_id"] for row in pol_rows})
    policy_idx = {p: k for k, p in enumerate(policy_ids)}
    names_by_id: dict[str, str] = {}
    a = np.zeros((t_total, n, len(policy_ids)))
    grid_start, grid_end = dates[0], dates[-1]
    for row in pol_rows:
        if row["state"] not in state_idx:
            raise IngestionError(f"{policy_path}: unknown state {row['state']!r} (policy={row['policy_id']})")
        start = _parse_date(policy_path, f"policy {row['policy_id']}", row["start_date"])
        end = _parse_date(policy_path, f"policy {row['policy_id']}", row["end_date"])
        if end < start:
            raise SchemaError(f"{policy_path}: policy {row['policy_id']} ends {end} before it starts {start}")
        names_by_id.setdefault(row["policy_id"], row["policy_name"])
        k = policy_idx[row["policy_id"]]
        i = state_idx[row["state"]]
        day = max(start, grid_start)
        while day <= min(end, grid_end):
            if day in date_idx:
                a[date_idx[day], i, k] = 1.0
            day += timedelta(days=1)

    labels = [names_by_id[p] for p in policy_ids]
    if len(set(labels)) != len(labels):
        labels = [f"{names_by_id[p]} [{p}]" for p in policy_ids]

    out_col = COVARIATE_COLUMNS.index(outcome)
    return ObservationPanel(
        covariates=x,
        adjacency=w,
        treatments=a,
        outcomes=x[:, :, out_col : out_col + 1],
        step_size=float(step_days),
        agent_names=tuple(states),
        treatment_names=tuple(labels),
    )

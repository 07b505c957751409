"""Command-line interface: simulate, train, eval, export, scenario, serve."""

from __future__ import annotations

import json
from pathlib import Path

import click

from .covid import load_covid_panel
from .errors import SchemaError
from .panel import load_cohort, load_manifest
from .pkpd import CohortConfig, SimulatedCohort, scale_edge_range, simulate_cohort
from .scenario import emit_plot_data, load_script, run_scenario, serialize_script
from .service import serve as run_service
from .training import (
    EvalReport,
    evaluate_report,
    export_latents,
    load_checkpoint,
    model_from_checkpoint,
    parse_config,
    partition,
    trace_index,
    train,
    write_config,
)


def load_panel_dir(data_dir: str | Path):
    """Load panels (and traces when present) from a data directory.

    Accepts either a simulated-cohort directory (manifest.json) or a
    directory of the three raw delimited files covariates.csv,
    mobility.csv, policies.csv.
    """
    data_dir = Path(data_dir)
    if (data_dir / "manifest.json").exists():
        manifest = load_manifest(data_dir)
        if manifest.get("kind") == "pkpd-cohort":
            cohort = SimulatedCohort.load(data_dir)
            return cohort.panels, cohort.traces
        return load_cohort(data_dir), None
    csvs = [data_dir / name for name in ("covariates.csv", "mobility.csv", "policies.csv")]
    if all(p.exists() for p in csvs):
        return [load_covid_panel(*csvs)], None
    raise SchemaError(
        f"{data_dir}: expected a cohort manifest.json or covariates.csv/mobility.csv/policies.csv"
    )


@click.group()
def main():
    """Counterfactual trajectory forecasting for treated, interacting agents."""


@main.command()
@click.option("--patients", "-p", type=int, required=True, help="Number of patients to simulate.")
@click.option("--regions", "-r", type=int, default=None, help="Tumor regions per patient.")
@click.option("--horizon", "-t", type=int, default=None, help="Days to simulate.")
@click.option("--seed", "-s", type=int, default=0)
@click.option("--out", "-o", type=click.Path(), required=True)
@click.option("--long-range", is_flag=True, help="Sparser 5-region variant with a longer horizon.")
def simulate(patients, regions, horizon, seed, out, long_range):
    """Generate a synthetic tumor cohort into OUT."""
    overrides = {}
    if regions is not None:
        # The edge budget is not a CLI knob, so rescale the preset's budget
        # to the requested region count; the preset default would be
        # infeasible for smaller graphs.
        base = CohortConfig.long_range(1) if long_range else CohortConfig(n_patients=1)
        overrides["n_regions"] = regions
        overrides["edge_count_range"] = scale_edge_range(base, regions)
    if horizon is not None:
        overrides["horizon"] = horizon
    if long_range:
        config = CohortConfig.long_range(patients, seed=seed, **overrides)
    else:
        config = CohortConfig(n_patients=patients, seed=seed, **overrides)
    cohort = simulate_cohort(config)
    cohort.save(out)
    click.echo(f"wrote {patients} panels to {out}")


@main.command(name="train")
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--outcome", default="confirmed", help="Outcome column for raw delimited data.")
def train_cmd(data, config_path, out, outcome):
    """Train a model on the panels in DATA."""
    config = parse_config(config_path)
    data_dir = Path(data)
    if (data_dir / "manifest.json").exists():
        panels, _ = load_panel_dir(data_dir)
    else:
        csvs = [data_dir / name for name in ("covariates.csv", "mobility.csv", "policies.csv")]
        if not all(p.exists() for p in csvs):
            raise SchemaError(
                f"{data_dir}: expected a cohort manifest.json or "
                "covariates.csv/mobility.csv/policies.csv"
            )
        panels = [load_covid_panel(*csvs, outcome=outcome)]
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_config(config, out_dir / "config.txt")

    def log(entry):
        parts = [f"epoch {entry['epoch']}", f"train loss {entry['train_loss']:.6f}"]
        if "val_rmse" in entry:
            parts.append(f"val rmse {entry['val_rmse']:.6f}")
        click.echo("  ".join(parts))

    result = train(panels, config, out_dir=out_dir, log=log)
    click.echo(f"best epoch {result.best_epoch}; checkpoint at {out_dir / 'checkpoint.pt'}")


@main.command(name="eval")
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--horizon", type=int, required=True)
@click.option("--flip", type=float, multiple=True, help="Counterfactual flip ratio (repeatable).")
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), default=None, help="Write the report JSON here too.")
def eval_cmd(checkpoint, data, horizon, flip, seed, out):
    """Evaluate a checkpoint on the test split of DATA."""
    ckpt = load_checkpoint(checkpoint)
    model = model_from_checkpoint(ckpt)
    panels, traces = load_panel_dir(data)
    split = partition(panels, ckpt.config)
    traces_map = trace_index(panels, traces) if traces is not None else None
    report: EvalReport = evaluate_report(
        model, ckpt.stats, split.test, traces_map, horizon, ratios=flip, seeds=(seed,)
    )
    text = json.dumps(report.to_json(), indent=2)
    click.echo(text)
    if out:
        Path(out).write_text(text + "\n")


@main.command(name="export-latents")
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--panel-index", type=int, default=0)
@click.option("--out", type=click.Path(), required=True)
def export_latents_cmd(checkpoint, data, panel_index, out):
    """Export per-(agent, step) latents of one panel for projection tools."""
    ckpt = load_checkpoint(checkpoint)
    model = model_from_checkpoint(ckpt)
    panels, _ = load_panel_dir(data)
    export_latents(model, ckpt.stats, panels[panel_index], out, ckpt.config.obs_len)
    click.echo(f"wrote {out}")


@main.command(name="scenario")
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--panel", "panel_dir", type=click.Path(exists=True), required=True)
@click.option("--panel-index", type=int, default=0)
@click.option("--script", "script_path", type=click.Path(exists=True), required=True)
@click.option("--horizon", type=int, required=True)
@click.option("--out", type=click.Path(), required=True)
def scenario_cmd(checkpoint, panel_dir, panel_index, script_path, horizon, out):
    """Run an intervention script and write trajectories plus plot data."""
    ckpt = load_checkpoint(checkpoint)
    model = model_from_checkpoint(ckpt)
    panels, _ = load_panel_dir(panel_dir)
    panel = panels[panel_index]
    edits = load_script(script_path)
    result = run_scenario(model, ckpt.stats, ckpt.config.obs_len, panel, edits, horizon)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "result.json").write_text(
        json.dumps(
            {
                "factual": result.factual[:, :, 0].tolist(),
                "counterfactual": result.counterfactual[:, :, 0].tolist(),
                "delta": result.delta[:, :, 0].tolist(),
                "edited_schedule": result.edited_schedule.tolist(),
                "per_agent_delta": result.per_agent_delta.tolist(),
                "mean_delta": result.mean_delta,
                "script": serialize_script(edits),
            },
            indent=2,
        )
        + "\n"
    )
    emit_plot_data(result, out_dir / "plot.csv")
    click.echo(f"mean delta over horizon: {result.mean_delta:+.6f}")


@main.command(name="serve")
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--panel", "panel_dir", type=click.Path(exists=True), required=True)
@click.option("--panel-index", type=int, default=0)
@click.option("--bind", default="127.0.0.1:8000")
def serve_cmd(checkpoint, panel_dir, panel_index, bind):
    """Serve the scenario wire protocol over HTTP."""
    ckpt = load_checkpoint(checkpoint)
    panels, _ = load_panel_dir(panel_dir)
    run_service(ckpt, panels[panel_index], bind)


if __name__ == "__main__":
    main()

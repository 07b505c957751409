"""Training loop, evaluation metrics, checkpoints, and latent export.

Training is sequence-to-sequence over sliding-window chunks: condition on
the observation window, predict the rest, minimize the weighted loss with
a decoupled-weight-decay adaptive optimizer. Everything is seeded, so a
config plus seed reproduces the loss sequence bit for bit on one machine.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .dynamics import SolverConfig
from .errors import CheckpointError, ConfigError, DivergenceError, UnsupportedOperationError
from .model import Batch, GraphODEModel, collate
from .objectives import LossWeights
from .panel import Chunk, NormStats, ObservationPanel, fit_normalizer, flip_entries, split_panel
from .pkpd import PatientTrace, counterfactual_outcomes

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Every knob of the training pipeline; serializes to flat key=value text."""

    obs_len: int = 7
    pred_len: int = 14
    interval: int = 3
    latent_dim: int = 20
    hidden_dim: int = 64
    control_dim: int = 5
    encoder_layers: int = 1
    encoder_nonlinearity: str = "relu"
    drift_nonlinearity: str = "tanh"
    substeps: int = 5
    gradient_mode: str = "backprop"
    learning_rate: float = 0.005
    batch_size: int = 8
    epochs: int = 50
    weight_decay: float = 1e-4
    edge_weight: float = 0.5
    treatment_weight: float = 10.0
    interference_weight: float = 10.0
    kl_weight: float = 1.0
    no_treatment_balance: bool = False
    no_interference_balance: bool = False
    no_attention: bool = False
    patience: int = 10
    val_fraction: float = 0.15
    test_fraction: float = 0.15
    split_mode: str = "auto"
    scale: str = "standard"
    seed: int = 0

    def __post_init__(self):
        for name in ("obs_len", "pred_len", "interval", "latent_dim", "hidden_dim", "control_dim",
                     "encoder_layers", "substeps", "batch_size", "epochs", "patience"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be nonnegative")
        if not 0 <= self.val_fraction < 1 or not 0 <= self.test_fraction < 1:
            raise ConfigError("split fractions must lie in [0, 1)")
        if self.val_fraction + self.test_fraction >= 1:
            raise ConfigError("split fractions leave no training data")
        if self.split_mode not in ("auto", "panel", "time"):
            raise ConfigError("split_mode must be auto, panel, or time")
        if self.scale not in ("standard", "log-standard"):
            raise ConfigError("scale must be standard or log-standard")

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(
            edge=self.edge_weight,
            treatment=0.0 if self.no_treatment_balance else self.treatment_weight,
            interference=0.0 if self.no_interference_balance else self.interference_weight,
            kl=self.kl_weight,
        )


def parse_config(path: str | Path, **overrides) -> TrainConfig:
    """Read a flat key=value config file; unknown keys are rejected."""
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    values: dict = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {line!r}")
        key, _, raw = text.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in fields:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(path, lineno, key, raw, fields[key].type)
    values.update(overrides)
    return TrainConfig(**values)


def _coerce(path, lineno, key, raw, type_name):
    kind = type_name if isinstance(type_name, str) else type_name.__name__
    try:
        if kind == "bool":
            lowered = raw.lower()
            if lowered in ("true", "yes", "1"):
                return True
            if lowered in ("false", "no", "0"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{path}:{lineno}: bad {kind} value for {key}: {raw!r}") from exc


def write_config(config: TrainConfig, path: str | Path) -> None:
    lines = [f"{f.name} = {getattr(config, f.name)}" for f in dataclasses.fields(TrainConfig)]
    Path(path).write_text("\n".join(lines) + "\n")


def build_model(config: TrainConfig, n_features: int, n_treatments: int, n_outcomes: int) -> GraphODEModel:
    return GraphODEModel(
        n_features=n_features,
        n_treatments=n_treatments,
        n_outcomes=n_outcomes,
        latent_dim=config.latent_dim,
        hidden_dim=config.hidden_dim,
        control_dim=config.control_dim,
        encoder_layers=config.encoder_layers,
        encoder_nonlinearity=config.encoder_nonlinearity,
        drift_nonlinearity=config.drift_nonlinearity,
        attention=not config.no_attention,
        balance_treatments=not config.no_treatment_balance,
        balance_interference=not config.no_interference_balance,
        solver=SolverConfig(substeps=config.substeps, gradient_mode=config.gradient_mode),
    )


@dataclass(frozen=True)
class DataSplit:
    train: list[Chunk]
    val: list[Chunk]
    test: list[Chunk]


def partition(panels: Sequence[ObservationPanel], config: TrainConfig) -> DataSplit:
    """Deterministic train/val/test split into chunks.

    ``split_mode`` picks the axis: ``panel`` holds out whole panels (later
    panels become val and test), ``time`` pools every panel's chunks and
    holds out the latest windows, and ``auto`` uses ``panel`` when several
    panels exist and ``time`` otherwise. Proportions come from the config
    fractions; val and test get at least one unit when their fraction is
    nonzero and enough units exist.
    """

    def cut(units: int) -> tuple[int, int]:
        n_test = max(1, round(units * config.test_fraction)) if config.test_fraction > 0 else 0
        n_val = max(1, round(units * config.val_fraction)) if config.val_fraction > 0 else 0
        while units - n_val - n_test < 1:
            if n_val > 0:
                n_val -= 1
            elif n_test > 0:
                n_test -= 1
            else:
                break
        return n_val, n_test

    def chunks_of(group: Sequence[ObservationPanel]) -> list[Chunk]:
        return [c for p in group for c in split_panel(p, config.obs_len, config.pred_len, config.interval)]

    mode = config.split_mode
    if mode == "auto":
        mode = "panel" if len(panels) > 1 else "time"
    if mode == "panel":
        n_val, n_test = cut(len(panels))
        n_train = len(panels) - n_val - n_test
        return DataSplit(
            train=chunks_of(panels[:n_train]),
            val=chunks_of(panels[n_train : n_train + n_val]),
            test=chunks_of(panels[n_train + n_val :]),
        )
    chunks = sorted(chunks_of(panels), key=lambda c: c.start)
    n_val, n_test = cut(len(chunks))
    n_train = len(chunks) - n_val - n_test
    return DataSplit(
        train=chunks[:n_train],
        val=chunks[n_train : n_train + n_val],
        test=chunks[n_train + n_val :],
    )


@dataclass
class Checkpoint:
    """Everything needed to rebuild and run a trained model."""

    config: TrainConfig
    state_dict: dict
    stats: NormStats
    n_features: int
    n_treatments: int
    n_outcomes: int
    version: int = CHECKPOINT_VERSION


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    """Atomic write (temp file + rename) of a checkpoint."""
    payload = {
        "version": ckpt.version,
        "config": dataclasses.asdict(ckpt.config),
        "state_dict": ckpt.state_dict,
        "stats": {
            "cov_mean": ckpt.stats.cov_mean.tolist(),
            "cov_std": ckpt.stats.cov_std.tolist(),
            "out_mean": ckpt.stats.out_mean.tolist(),
            "out_std": ckpt.stats.out_std.tolist(),
            "scale": ckpt.stats.scale,
        },
        "dims": [ckpt.n_features, ckpt.n_treatments, ckpt.n_outcomes],
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        payload = torch.load(path, weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc})") from exc
    try:
        version = payload["version"]
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path}: checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})"
            )
        stats = NormStats(
            cov_mean=np.array(payload["stats"]["cov_mean"]),
            cov_std=np.array(payload["stats"]["cov_std"]),
            out_mean=np.array(payload["stats"]["out_mean"]),
            out_std=np.array(payload["stats"]["out_std"]),
            scale=payload["stats"]["scale"],
        )
        dims = payload["dims"]
        return Checkpoint(
            config=TrainConfig(**payload["config"]),
            state_dict=payload["state_dict"],
            stats=stats,
            n_features=int(dims[0]),
            n_treatments=int(dims[1]),
            n_outcomes=int(dims[2]),
            version=version,
        )
    except (KeyError, TypeError, IndexError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from exc


def model_from_checkpoint(ckpt: Checkpoint) -> GraphODEModel:
    model = build_model(ckpt.config, ckpt.n_features, ckpt.n_treatments, ckpt.n_outcomes)
    model.load_state_dict(ckpt.state_dict)
    model.eval()
    return model


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    model: GraphODEModel
    split: DataSplit
    history: list[dict]
    best_epoch: int


def _batched(items: Sequence, size: int):
    for i in range(0, len(items), size):
        yield items[i : i + size]


def train(
    panels: Sequence[ObservationPanel],
    config: TrainConfig,
    out_dir: str | Path | None = None,
    log=None,
) -> TrainResult:
    """Fit a model on the given panels.

    Writes, when out_dir is given: a JSONL loss log (one record per
    optimizer step), a periodic checkpoint after every epoch, and the final
    best checkpoint. Early stopping watches validation RMSE (training loss
    when the validation split is empty) with the configured patience.
    """
    if not panels:
        raise ConfigError("no panels to train on")
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    split = partition(panels, config)
    if not split.train:
        raise ConfigError("empty training split")
    stats = fit_normalizer(split.train, scale=config.scale)
    weights = config.loss_weights

    torch.manual_seed(config.seed)
    model = build_model(
        config, panels[0].n_covariates, panels[0].n_treatments, panels[0].n_outcomes
    )
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay
    )
    sample_gen = torch.Generator().manual_seed(config.seed)
    shuffle_rng = np.random.default_rng(config.seed)

    log_fh = (out_dir / "loss_log.jsonl").open("w") if out_dir is not None else None
    history: list[dict] = []
    best_metric = math.inf
    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    best_epoch = -1
    stale = 0

    try:
        for epoch in range(config.epochs):
            model.train()
            order = shuffle_rng.permutation(len(split.train))
            epoch_total = 0.0
            for step, idx_group in enumerate(_batched(order, config.batch_size)):
                batch = collate([split.train[i] for i in idx_group], stats)
                optimizer.zero_grad()
                total, report = model.losses(batch, weights, generator=sample_gen)
                if not math.isfinite(report.total):
                    raise DivergenceError(
                        f"non-finite loss at epoch {epoch}, step {step}", step=step
                    )
                total.backward()
                optimizer.step()
                epoch_total += report.total
                if log_fh is not None:
                    record = {"epoch": epoch, "step": step, **report.to_record()}
                    log_fh.write(json.dumps(record) + "\n")
            if log_fh is not None:
                log_fh.flush()

            n_steps = math.ceil(len(split.train) / config.batch_size)
            if split.val:
                metric = evaluate_factual(model, stats, split.val, config.pred_len)
                entry = {"epoch": epoch, "train_loss": epoch_total / n_steps, "val_rmse": metric}
            else:
                metric = epoch_total / n_steps
                entry = {"epoch": epoch, "train_loss": metric}
            history.append(entry)
            if log is not None:
                log(entry)

            if metric < best_metric:
                best_metric = metric
                best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
                best_epoch = epoch
                stale = 0
            else:
                stale += 1
            if out_dir is not None:
                running = Checkpoint(
                    config=config,
                    state_dict=model.state_dict(),
                    stats=stats,
                    n_features=panels[0].n_covariates,
                    n_treatments=panels[0].n_treatments,
                    n_outcomes=panels[0].n_outcomes,
                )
                save_checkpoint(running, out_dir / "checkpoint_latest.pt")
            if stale > config.patience:
                break
    finally:
        if log_fh is not None:
            log_fh.close()

    model.load_state_dict(best_state)
    model.eval()
    checkpoint = Checkpoint(
        config=config,
        state_dict={k: v.detach().clone() for k, v in model.state_dict().items()},
        stats=stats,
        n_features=panels[0].n_covariates,
        n_treatments=panels[0].n_treatments,
        n_outcomes=panels[0].n_outcomes,
    )
    if out_dir is not None:
        save_checkpoint(checkpoint, out_dir / "checkpoint.pt")
        (out_dir / "train_summary.json").write_text(
            json.dumps({"best_epoch": best_epoch, "history": history}, indent=2) + "\n"
        )
    return TrainResult(
        checkpoint=checkpoint, model=model, split=split, history=history, best_epoch=best_epoch
    )


def _rmse_accumulate(pred: np.ndarray, true: np.ndarray) -> tuple[float, int]:
    err = pred - true
    return float((err**2).sum()), err.size


def evaluate_factual(
    model: GraphODEModel,
    stats: NormStats,
    chunks: Sequence[Chunk],
    horizon: int,
    batch_size: int = 32,
) -> float:
    """RMSE of mean-posterior predictions on denormalized outcomes."""
    model.eval()
    sq_sum, count = 0.0, 0
    with torch.no_grad():
        for group in _batched(list(chunks), batch_size):
            batch = collate(group, stats, horizon=horizon)
            out = model(batch, sample=False)
            pred = stats.denormalize_outcomes(out.outcomes.permute(1, 2, 0, 3).numpy())
            for b, chunk in enumerate(group):
                true = chunk.panel.outcomes[:, chunk.pred_start : chunk.pred_start + horizon, :]
                s, n = _rmse_accumulate(pred[b], true)
                sq_sum += s
                count += n
    return math.sqrt(sq_sum / count)


def evaluate_counterfactual(
    model: GraphODEModel,
    stats: NormStats,
    chunks: Sequence[Chunk],
    traces: dict[int, PatientTrace],
    ratio: float,
    seed: int,
    horizon: int,
    batch_size: int = 32,
) -> float:
    """RMSE against replayed ground truth under randomly flipped treatments.

    Flips hit only the prediction window of each chunk; ground truth is the
    simulator replay with identical noise. ``traces`` maps id(panel) to the
    patient trace; panels without one cannot provide ground truth.

    With ratio 0 this returns exactly the factual RMSE.
    """
    model.eval()
    sq_sum, count = 0.0, 0
    chunk_list = list(chunks)
    with torch.no_grad():
        for group_idx, group in enumerate(_batched(chunk_list, batch_size)):
            schedules, truths = [], []
            for offset, chunk in enumerate(group):
                trace = traces.get(id(chunk.panel))
                if trace is None:
                    raise UnsupportedOperationError(
                        "counterfactual ground truth needs simulator-backed panels with traces"
                    )
                chunk_idx = group_idx * batch_size + offset
                p0 = chunk.pred_start
                schedule = np.array(chunk.panel.treatments)
                schedule[p0 : p0 + horizon] = flip_entries(
                    schedule[p0 : p0 + horizon], ratio, [seed, chunk_idx]
                )
                schedules.append(schedule)
                truths.append(counterfactual_outcomes(trace, schedule, p0, horizon))
            batch = collate(group, stats, horizon=horizon, schedules=schedules)
            out = model(batch, sample=False)
            pred = stats.denormalize_outcomes(out.outcomes.permute(1, 2, 0, 3).numpy())
            for b in range(len(group)):
                s, n = _rmse_accumulate(pred[b], truths[b])
                sq_sum += s
                count += n
    return math.sqrt(sq_sum / count)


def persistence_baseline(chunks: Sequence[Chunk], horizon: int) -> float:
    """RMSE of carrying the last observed outcome forward unchanged."""
    sq_sum, count = 0.0, 0
    for chunk in chunks:
        last = chunk.panel.outcomes[:, chunk.pred_start - 1, :]
        true = chunk.panel.outcomes[:, chunk.pred_start : chunk.pred_start + horizon, :]
        s, n = _rmse_accumulate(np.broadcast_to(last[:, None, :], true.shape), true)
        sq_sum += s
        count += n
    return math.sqrt(sq_sum / count)


@dataclass(frozen=True)
class EvalReport:
    """Evaluation summary: factual, baseline, and per-ratio counterfactuals.

    Counterfactual values are tuples across evaluation seeds, in the order
    of ``seeds``; mean and std helpers aggregate over them.
    """

    horizon: int
    factual_rmse: float
    baseline_rmse: float
    seeds: tuple[int, ...] = ()
    counterfactual: dict[float, tuple[float, ...]] = field(default_factory=dict)

    def cf_mean(self, ratio: float) -> float:
        values = self.counterfactual[ratio]
        return sum(values) / len(values)

    def cf_std(self, ratio: float) -> float:
        values = self.counterfactual[ratio]
        mean = self.cf_mean(ratio)
        return math.sqrt(sum((v - mean) ** 2 for v in values) / len(values))

    def to_json(self) -> dict:
        return {
            "horizon": self.horizon,
            "factual_rmse": self.factual_rmse,
            "baseline_rmse": self.baseline_rmse,
            "seeds": list(self.seeds),
            "counterfactual": {
                str(ratio): {"values": list(vals), "mean": self.cf_mean(ratio), "std": self.cf_std(ratio)}
                for ratio, vals in self.counterfactual.items()
            },
        }


def evaluate_report(
    model: GraphODEModel,
    stats: NormStats,
    chunks: Sequence[Chunk],
    traces: dict[int, PatientTrace] | None,
    horizon: int,
    ratios: Sequence[float] = (),
    seeds: Sequence[int] = (0,),
) -> EvalReport:
    factual = evaluate_factual(model, stats, chunks, horizon)
    baseline = persistence_baseline(chunks, horizon)
    counterfactual: dict[float, tuple[float, ...]] = {}
    for ratio in ratios:
        values = tuple(
            evaluate_counterfactual(model, stats, chunks, traces or {}, ratio, seed, horizon)
            for seed in seeds
        )
        counterfactual[float(ratio)] = values
    return EvalReport(
        horizon=horizon,
        factual_rmse=factual,
        baseline_rmse=baseline,
        seeds=tuple(seeds),
        counterfactual=counterfactual,
    )


def trace_index(panels: Sequence[ObservationPanel], traces: Sequence[PatientTrace]) -> dict[int, PatientTrace]:
    """Map panel identity to its simulation trace for counterfactual eval."""
    return {id(panel): trace for panel, trace in zip(panels, traces)}


def export_latents(
    model: GraphODEModel,
    stats: NormStats,
    panel: ObservationPanel,
    path: str | Path,
    obs_len: int,
) -> None:
    """Write per-(agent, step) latent vectors with their treatment flags.

    The model conditions on the panel's first obs_len steps and integrates
    across the remainder; one CSV row per agent and predicted step, columns
    agent, t, the K treatment flags at t, then the latent values.
    """
    pred_len = panel.n_steps - obs_len
    if pred_len < 1:
        raise ConfigError(f"panel of {panel.n_steps} steps leaves no room after {obs_len} observed")
    chunk = Chunk(panel, 0, obs_len, pred_len)
    model.eval()
    with torch.no_grad():
        out = model(collate([chunk], stats), sample=False)
    latents = out.node_traj[:, 0].numpy()  # [M, N, d]
    d = latents.shape[-1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["agent", "t", *panel.treatment_names, *[f"z{j}" for j in range(d)]]
        )
        for i in range(panel.n_agents):
            for m in range(pred_len):
                t_abs = obs_len + m
                flags = panel.treatments[t_abs, i].astype(int)
                writer.writerow([panel.agent_names[i], t_abs, *flags, *latents[m, i]])

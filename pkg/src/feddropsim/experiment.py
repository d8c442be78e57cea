"""Config-driven experiment orchestration and metrics emission.

One validated config expands into one run per seed over a shared dataset and
partition (the data seed is separate from run seeds, so across-seed spread
measures training randomness, not data randomness). Results flatten into a
fixed-column CSV plus a versioned JSON-ready summary, and each run's final
global-model gradient is captured for the variance analysis tooling.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .data import Dataset, PartitionSpec, load_csv, partition, synth_blobs
from .errors import ConfigError
from .nn import DataBatch, Hyperparams, ModelParams, loss_and_grads
from .simulator import (
    ClientProfile,
    RoundRecord,
    SimConfig,
    StrategyParams,
    run_experiment,
)

SCHEMA_VERSION = 1
METRICS_COLUMNS = (
    "seed",
    "round",
    "method",
    "r",
    "straggler_ids",
    "sim_round_time_s",
    "straggler_time_s",
    "target_time_s",
    "eval_loss",
    "eval_acc",
    "invariant_fraction",
    "thresholds_json",
)


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.data_source == "csv":
        return load_csv(cfg.csv_path)
    return synth_blobs(cfg.data_seed, cfg.classes, cfg.dim, cfg.n_per_class, cfg.spread)


def build_profiles(cfg: ExperimentConfig, ds: Dataset) -> tuple[ClientProfile, ...]:
    spec = PartitionSpec(
        kind=cfg.partition,
        client_count=cfg.client_count,
        seed=cfg.data_seed,
        skew_alpha=cfg.skew_alpha if cfg.partition == "label_skew" else None,
    )
    shards = partition(ds, spec)
    return tuple(
        ClientProfile(i, cfg.client_base_times_s[i], train, evl)
        for i, (train, evl) in enumerate(shards)
    )


def to_sim_config(
    cfg: ExperimentConfig,
    profiles: tuple[ClientProfile, ...],
    layer_sizes: tuple[int, ...],
    seed: int,
) -> SimConfig:
    return SimConfig(
        layer_sizes=layer_sizes,
        profiles=profiles,
        method=cfg.method,
        rounds=cfg.rounds,
        hyper=Hyperparams(cfg.learning_rate, cfg.batch_size, cfg.local_epochs, seed=0),
        strategy=StrategyParams(
            warmup=cfg.warmup_rounds,
            growth=cfg.threshold_growth,
            r_min=cfg.r_min,
            fixed_rate=cfg.fixed_rate,
        ),
        seed=seed,
        straggler_fraction=cfg.straggler_fraction,
        straggler_ids=tuple(cfg.straggler_ids) if cfg.straggler_ids is not None else None,
        target_slack=cfg.target_slack,
    )


def flatten_gradient(grads: ModelParams) -> np.ndarray:
    """Flatten per-layer (weights, biases) gradients into one vector, layer by
    layer, weights row-major first then biases."""
    parts = []
    for layer in grads.layers:
        parts.append(layer.weights.ravel())
        parts.append(layer.biases.ravel())
    return np.concatenate(parts)


def _pooled_train_batch(profiles: tuple[ClientProfile, ...]) -> DataBatch:
    feats = np.concatenate([p.shard.features for p in profiles])
    labels = np.concatenate([p.shard.labels for p in profiles])
    return DataBatch(feats, labels)


def _fmt(x: float) -> str:
    return repr(float(x))


def metrics_row(seed: int, method: str, rec: RoundRecord) -> dict[str, str]:
    # the binding rate: the most aggressive sub-model in play this round
    r_value = min(rec.rates.values()) if rec.rates else 1.0
    return {
        "seed": str(seed),
        "round": str(rec.round),
        "method": method,
        "r": _fmt(r_value),
        "straggler_ids": ";".join(str(i) for i in rec.straggler_ids),
        "sim_round_time_s": _fmt(rec.sim_round_time_s),
        "straggler_time_s": _fmt(rec.straggler_time_s),
        "target_time_s": _fmt(rec.target_time_s) if rec.target_time_s is not None else "",
        "eval_loss": _fmt(rec.eval_loss),
        "eval_acc": _fmt(rec.eval_acc),
        "invariant_fraction": _fmt(rec.invariant_fraction),
        "thresholds_json": json.dumps([float(d) for d in rec.thresholds]),
    }


def metrics_csv_text(rows: list[dict[str, str]]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=METRICS_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


@dataclass(frozen=True)
class RunResult:
    seeds: list[int]
    rows: list[dict[str, str]]
    metrics_csv: str
    summary: dict
    gradients: dict[int, np.ndarray]  # seed -> flattened final global gradient


def run_config(cfg: ExperimentConfig, seeds: list[int] | None = None) -> RunResult:
    """Run the experiment once per seed and assemble all artifacts."""
    seeds = list(seeds) if seeds is not None else list(cfg.seeds)
    if not seeds or len(set(seeds)) != len(seeds) or any(s < 0 for s in seeds):
        raise ConfigError("seeds must be nonempty, unique, and nonnegative")
    ds = build_dataset(cfg)
    if cfg.data_source == "csv" and ds.dim < 2:
        raise ConfigError("csv dataset must have at least 2 feature columns")
    profiles = build_profiles(cfg, ds)
    layer_sizes = (ds.dim, *cfg.hidden_layers, ds.class_count)
    pooled = _pooled_train_batch(profiles)

    rows: list[dict[str, str]] = []
    per_seed: list[dict] = []
    gradients: dict[int, np.ndarray] = {}
    for seed in seeds:
        sim = to_sim_config(cfg, profiles, layer_sizes, seed)
        final: dict[str, ModelParams] = {}

        def grab(state, record, _sink=final):
            _sink["model"] = state.global_model

        records, summary = run_experiment(sim, on_round=grab)
        rows.extend(metrics_row(seed, cfg.method, rec) for rec in records)
        per_seed.append({"seed": seed, **summary})
        _, grads = loss_and_grads(final["model"], pooled)
        gradients[seed] = flatten_gradient(grads)

    accs = [s["best_acc"] for s in per_seed]
    summary = {
        "schema_version": SCHEMA_VERSION,
        "method": cfg.method,
        "rounds": cfg.rounds,
        "seeds": seeds,
        "per_seed": per_seed,
        "mean_best_acc": float(np.mean(accs)),
        "std_best_acc": float(np.std(accs)),  # population std across seeds
    }
    return RunResult(
        seeds=seeds,
        rows=rows,
        metrics_csv=metrics_csv_text(rows),
        summary=summary,
        gradients=gradients,
    )

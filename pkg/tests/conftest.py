"""Shared builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from feddropsim import (
    ClientProfile,
    DataBatch,
    DenseLayerParams,
    Hyperparams,
    ModelParams,
    PartitionSpec,
    SimConfig,
    StrategyParams,
    partition,
    synth_blobs,
)


def model_from(*layers: tuple) -> ModelParams:
    """Build a model from (weights, biases) pairs of plain lists."""
    return ModelParams(
        tuple(
            DenseLayerParams(
                np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64)
            )
            for w, b in layers
        )
    )


def flatten_params(model: ModelParams) -> np.ndarray:
    parts = []
    for layer in model.layers:
        parts.append(layer.weights.ravel())
        parts.append(layer.biases.ravel())
    return np.concatenate(parts)


def models_equal(a: ModelParams, b: ModelParams) -> bool:
    return a.layer_sizes == b.layer_sizes and all(
        np.array_equal(x.weights, y.weights) and np.array_equal(x.biases, y.biases)
        for x, y in zip(a.layers, b.layers)
    )


def make_profiles(
    base_times: list[float],
    *,
    classes: int = 3,
    dim: int = 4,
    n_per_class: int = 30,
    spread: float = 0.5,
    data_seed: int = 7,
    kind: str = "iid",
    skew_alpha: float | None = None,
) -> tuple[ClientProfile, ...]:
    ds = synth_blobs(data_seed, classes, dim, n_per_class, spread)
    spec = PartitionSpec(kind, len(base_times), seed=data_seed, skew_alpha=skew_alpha)
    shards = partition(ds, spec)
    return tuple(
        ClientProfile(i, t, train, evl)
        for i, (t, (train, evl)) in enumerate(zip(base_times, shards))
    )


def small_sim_config(
    method: str = "invariant",
    *,
    rounds: int = 4,
    base_times: list[float] | None = None,
    layer_sizes: tuple[int, ...] = (4, 8, 3),
    seed: int = 11,
    **overrides,
) -> SimConfig:
    base_times = base_times or [5.0, 6.0, 40.0]
    profiles = make_profiles(base_times)
    defaults = dict(
        layer_sizes=layer_sizes,
        profiles=profiles,
        method=method,
        rounds=rounds,
        hyper=Hyperparams(0.05, 16, 1, 0),
        strategy=StrategyParams(warmup=1, r_min=0.3),
        seed=seed,
    )
    defaults.update(overrides)
    return SimConfig(**defaults)


@pytest.fixture()
def api_post():
    """POST against the service in-process, exactly as the CLI does."""
    from feddropsim.cli import _InProcessClient

    def post(path: str, payload: dict):
        with _InProcessClient() as client:
            return client.post(path, json=payload)

    return post

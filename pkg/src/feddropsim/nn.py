"""Minimal dense feed-forward network: forward pass, softmax cross-entropy,
manual backprop, and seeded mini-batch SGD.

Everything is float64 and purely functional: no operation mutates its inputs,
and all randomness comes from explicit seeds, so identical calls give
bit-identical results.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionError, InputError, NumericError


@dataclass(frozen=True)
class DenseLayerParams:
    """One dense layer; row i of ``weights`` plus ``biases[i]`` is neuron i."""

    weights: np.ndarray  # [out_units, in_units]
    biases: np.ndarray  # [out_units]

    def __post_init__(self) -> None:
        w, b = np.asarray(self.weights), np.asarray(self.biases)
        if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
            raise DimensionError(
                f"layer weights {w.shape} and biases {b.shape} are inconsistent"
            )
        if w.shape[0] < 1 or w.shape[1] < 1:
            raise DimensionError(f"layer must have >=1 units, got {w.shape}")
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise NumericError("layer parameters contain non-finite values")

    @property
    def out_units(self) -> int:
        return self.weights.shape[0]

    @property
    def in_units(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class ModelParams:
    """Ordered dense layers; hidden layers use ReLU, the final layer is linear."""

    layers: tuple[DenseLayerParams, ...]

    def __post_init__(self) -> None:
        if not self.layers:
            raise DimensionError("model needs at least one layer")
        for j in range(1, len(self.layers)):
            if self.layers[j].in_units != self.layers[j - 1].out_units:
                raise DimensionError(
                    f"layer {j} expects {self.layers[j].in_units} inputs but "
                    f"layer {j - 1} emits {self.layers[j - 1].out_units}"
                )

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        """[input_dim, hidden..., output_dim]."""
        return (self.layers[0].in_units,) + tuple(l.out_units for l in self.layers)

    def param_count(self) -> int:
        return sum(l.weights.size + l.biases.size for l in self.layers)


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float
    batch_size: int
    local_epochs: int
    seed: int

    def __post_init__(self) -> None:
        if self.learning_rate < 0:
            raise InputError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.local_epochs < 1:
            raise InputError("batch_size and local_epochs must be >= 1")


@dataclass(frozen=True)
class DataBatch:
    features: np.ndarray  # [n, dim] float64
    labels: np.ndarray  # [n] integer class ids

    def __post_init__(self) -> None:
        x, y = np.asarray(self.features), np.asarray(self.labels)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise DimensionError(
                f"features {x.shape} and labels {y.shape} are inconsistent"
            )
        if x.shape[0] < 1:
            raise InputError("batch must contain at least one example")
        if not np.isfinite(x).all():
            raise NumericError("features contain non-finite values")
        if y.min() < 0:
            raise InputError("labels must be nonnegative class ids")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    def take(self, idx: np.ndarray) -> "DataBatch":
        return DataBatch(self.features[idx], self.labels[idx])


def init_model(layer_sizes: Sequence[int], seed: int) -> ModelParams:
    """Seeded uniform init in [-sqrt(6/(fan_in+fan_out)), +sqrt(...)] per layer."""
    if len(layer_sizes) < 2 or any(s < 1 for s in layer_sizes):
        raise DimensionError(f"invalid layer sizes {list(layer_sizes)}")
    rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
    layers = []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        layers.append(DenseLayerParams(w, np.zeros(fan_out)))
    return ModelParams(tuple(layers))


def _check_batch(model: ModelParams, batch: DataBatch) -> None:
    if batch.features.shape[1] != model.layers[0].in_units:
        raise DimensionError(
            f"batch dim {batch.features.shape[1]} != model input "
            f"{model.layers[0].in_units}"
        )
    if batch.labels.max() >= model.layers[-1].out_units:
        raise InputError(
            f"label {int(batch.labels.max())} out of range for "
            f"{model.layers[-1].out_units} classes"
        )


def _forward_pass(model: ModelParams, x: np.ndarray) -> list[np.ndarray]:
    """Returns activations per layer boundary: [input, h1, ..., logits]."""
    acts = [x]
    a = x
    last = len(model.layers) - 1
    for j, layer in enumerate(model.layers):
        z = a @ layer.weights.T + layer.biases
        a = np.maximum(z, 0.0) if j < last else z
        acts.append(a)
    return acts


def forward(model: ModelParams, batch: DataBatch) -> np.ndarray:
    """Logits [n, classes]; hidden layers ReLU, output layer linear."""
    _check_batch(model, batch)
    logits = _forward_pass(model, batch.features)[-1]
    if not np.isfinite(logits).all():
        raise NumericError("forward pass produced non-finite logits")
    return logits


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grads(model: ModelParams, batch: DataBatch) -> tuple[float, ModelParams]:
    """Mean softmax cross-entropy and its gradient, mirroring the model shape."""
    _check_batch(model, batch)
    acts = _forward_pass(model, batch.features)
    logits = acts[-1]
    n = batch.n

    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = float(-log_probs[np.arange(n), batch.labels].mean())
    if not np.isfinite(loss):
        raise NumericError("loss is non-finite")

    # dL/dlogits for mean cross-entropy
    delta = np.exp(log_probs)
    delta[np.arange(n), batch.labels] -= 1.0
    delta /= n

    grads: list[DenseLayerParams] = []
    for j in range(len(model.layers) - 1, -1, -1):
        a_in = acts[j]
        grads.append(DenseLayerParams(delta.T @ a_in, delta.sum(axis=0)))
        if j > 0:
            delta = (delta @ model.layers[j].weights) * (acts[j] > 0.0)
    grads.reverse()
    return loss, ModelParams(tuple(grads))


def sgd_step(model: ModelParams, grads: ModelParams, lr: float) -> ModelParams:
    return ModelParams(
        tuple(
            DenseLayerParams(l.weights - lr * g.weights, l.biases - lr * g.biases)
            for l, g in zip(model.layers, grads.layers)
        )
    )


def local_train(
    model: ModelParams, shard: DataBatch, hp: Hyperparams
) -> tuple[ModelParams, int, float]:
    """Seeded mini-batch SGD over the shard.

    Batches are consecutive slices of a fresh seeded permutation per epoch
    (``np.random.default_rng(hp.seed)``), rows kept in permutation order; this
    ordering is part of the contract so training is reproducible bit-for-bit.
    Returns the trained model, the shard size, and the mean loss across steps.
    """
    _check_batch(model, shard)
    rng = np.random.default_rng(hp.seed & 0xFFFFFFFFFFFFFFFF)
    params = model
    losses = []
    for _ in range(hp.local_epochs):
        order = rng.permutation(shard.n)
        for start in range(0, shard.n, hp.batch_size):
            batch = shard.take(order[start : start + hp.batch_size])
            loss, grads = loss_and_grads(params, batch)
            params = sgd_step(params, grads, hp.learning_rate)
            losses.append(loss)
    return params, shard.n, float(np.mean(losses))


def evaluate(model: ModelParams, data: DataBatch) -> tuple[float, float]:
    """Mean cross-entropy loss and argmax accuracy (ties -> lowest class id)."""
    logits = forward(model, data)
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = float(-log_probs[np.arange(data.n), data.labels].mean())
    preds = np.argmax(logits, axis=1)  # np.argmax takes the lowest index on ties
    return loss, float(np.mean(preds == data.labels))

"""Neuron-mask algebra: carve sub-models out of the global model and merge
heterogeneous (full and partial) client updates back in.

A mask lists the kept neurons of each *hidden* layer. Input features and the
output layer are never masked. Dropping a hidden neuron removes its weight
row, its bias, and its outgoing weight columns in the next layer, so kept
neurons keep their connections.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import AggregationError, MaskError
from .nn import DenseLayerParams, ModelParams


@dataclass(frozen=True)
class NeuronMask:
    """Per-hidden-layer strictly increasing kept-neuron indices."""

    kept: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        for j, idx in enumerate(self.kept):
            if len(idx) < 1:
                raise MaskError(f"hidden layer {j} would keep no neurons")
            if any(b <= a for a, b in zip(idx, idx[1:])) or idx[0] < 0:
                raise MaskError(f"hidden layer {j} indices must strictly increase")


@dataclass(frozen=True)
class CoordinateUpdate:
    """A trained (sub-)model plus the mask that defines its coordinates."""

    mask: NeuronMask
    params: ModelParams
    n_examples: int

    def __post_init__(self) -> None:
        if self.n_examples < 1:
            raise AggregationError("update must carry a positive example count")


def hidden_sizes(layer_sizes: Sequence[int]) -> tuple[int, ...]:
    return tuple(layer_sizes[1:-1])


def full_mask(layer_sizes: Sequence[int]) -> NeuronMask:
    return NeuronMask(tuple(tuple(range(k)) for k in hidden_sizes(layer_sizes)))


def _check_mask(layer_sizes: Sequence[int], mask: NeuronMask) -> None:
    hidden = hidden_sizes(layer_sizes)
    if len(mask.kept) != len(hidden):
        raise MaskError(
            f"mask covers {len(mask.kept)} hidden layers, model has {len(hidden)}"
        )
    for j, (idx, k) in enumerate(zip(mask.kept, hidden)):
        if idx[-1] >= k:
            raise MaskError(f"hidden layer {j}: index {idx[-1]} >= {k} units")


def masked_param_count(layer_sizes: Sequence[int], kept_counts: Sequence[int]) -> int:
    """Parameters of the sub-model keeping ``kept_counts[j]`` neurons in hidden
    layer j (exact integer count; output layer always full)."""
    total = 0
    fan_in = layer_sizes[0]
    for j in range(len(layer_sizes) - 1):
        out = kept_counts[j] if j < len(layer_sizes) - 2 else layer_sizes[-1]
        total += out * fan_in + out
        fan_in = out
    return total


def cost_fraction(layer_sizes: Sequence[int], mask: NeuronMask) -> float:
    """(sub-model weights+biases) / (global weights+biases); full mask -> 1.0."""
    _check_mask(layer_sizes, mask)
    sub = masked_param_count(layer_sizes, [len(k) for k in mask.kept])
    full = masked_param_count(layer_sizes, list(hidden_sizes(layer_sizes)))
    return sub / full


def extract_submodel(global_model: ModelParams, mask: NeuronMask) -> ModelParams:
    """Restrict the global model to the mask's kept neurons.

    Hidden layer j keeps weight rows and biases at ``kept[j]``; layer j+1 keeps
    the matching weight columns. Layer 0 keeps all input columns and the output
    layer keeps all rows.
    """
    _check_mask(global_model.layer_sizes, mask)
    layers = []
    prev_kept: np.ndarray | None = None
    last = len(global_model.layers) - 1
    for j, layer in enumerate(global_model.layers):
        w, b = layer.weights, layer.biases
        if prev_kept is not None:
            w = w[:, prev_kept]
        if j < last:
            rows = np.asarray(mask.kept[j], dtype=int)
            w, b = w[rows, :], b[rows]
            prev_kept = rows
        layers.append(DenseLayerParams(w.copy(), b.copy()))
    return ModelParams(tuple(layers))


def _coverage(layer_sizes: Sequence[int], mask: NeuronMask, j: int) -> tuple[np.ndarray, np.ndarray]:
    """Global (row indices, col indices) covered by the mask at layer j."""
    last = len(layer_sizes) - 2
    rows = (
        np.asarray(mask.kept[j], dtype=int)
        if j < last
        else np.arange(layer_sizes[-1])
    )
    cols = (
        np.asarray(mask.kept[j - 1], dtype=int) if j > 0 else np.arange(layer_sizes[0])
    )
    return rows, cols


def _canonical_order(updates: Sequence[CoordinateUpdate]) -> list[CoordinateUpdate]:
    """Content-based summation order, so permuting the input list cannot change
    the float accumulation order (and therefore the output bits)."""

    def key(u: CoordinateUpdate) -> tuple:
        payload = b"".join(
            l.weights.tobytes() + l.biases.tobytes() for l in u.params.layers
        )
        return (u.n_examples, u.mask.kept, payload)

    return sorted(updates, key=key)


def aggregate(
    global_model: ModelParams, updates: Sequence[CoordinateUpdate]
) -> ModelParams:
    """Example-weighted per-coordinate mean over the clients covering each
    coordinate; coordinates covered by nobody keep their global value.

    Updates are accumulated in a canonical content-sorted order (see
    ``_canonical_order``) so the result is independent of list order.
    """
    if not updates:
        raise AggregationError("need at least one update")
    sizes = global_model.layer_sizes
    for u in updates:
        _check_mask(sizes, u.mask)
        expected = [len(k) for k in u.mask.kept] + [sizes[-1]]
        got = [l.out_units for l in u.params.layers]
        if got != expected or u.params.layers[0].in_units != sizes[0]:
            raise AggregationError(
                f"update shape {got} does not match its mask (expected {expected})"
            )

    layers = []
    for j, layer in enumerate(global_model.layers):
        num_w = np.zeros_like(layer.weights)
        den_w = np.zeros_like(layer.weights)
        num_b = np.zeros_like(layer.biases)
        den_b = np.zeros_like(layer.biases)
        for u in _canonical_order(updates):
            rows, cols = _coverage(sizes, u.mask, j)
            n = float(u.n_examples)
            num_w[np.ix_(rows, cols)] += n * u.params.layers[j].weights
            den_w[np.ix_(rows, cols)] += n
            num_b[rows] += n * u.params.layers[j].biases
            den_b[rows] += n
        w = np.where(den_w > 0, num_w / np.where(den_w > 0, den_w, 1.0), layer.weights)
        b = np.where(den_b > 0, num_b / np.where(den_b > 0, den_b, 1.0), layer.biases)
        layers.append(DenseLayerParams(w, b))
    return ModelParams(tuple(layers))

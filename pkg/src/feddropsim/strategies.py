"""Mask-generation policies for straggler sub-models.

Three policies share one drop budget per hidden layer, floor((1-r)*K) neurons
at rate r (so they differ only in *which* neurons go):

- random: uniform without replacement, fresh seed per round;
- ordered: keep the contiguous index prefix;
- invariant: drop the neurons whose relative weight change stayed at or below
  a per-layer threshold for a strict majority of the non-straggler clients,
  longest invariance streaks first.

The thresholds warm-start from the first round's statistics, hold still for a
configurable warmup, then grow geometrically per layer until enough neurons
qualify.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import InputError, RateError
from .nn import ModelParams
from .submodel import NeuronMask, hidden_sizes

RATE_STEP = 0.05
ZERO_NORM_GUARD = 1e-12
DEFAULT_WARMUP = 5
DEFAULT_GROWTH = 1.1
DEFAULT_R_MIN = 0.5


def rate_to_twentieths(r: float) -> int:
    """Validate that r sits on the 0.05 grid and return round(r / 0.05)."""
    k20 = round(r / RATE_STEP)
    if abs(r - k20 * RATE_STEP) > 1e-9 or not (0 < k20 <= 20):
        raise RateError(f"rate {r} is not a multiple of {RATE_STEP} in (0, 1]")
    return k20


def rate_grid(r_min: float = DEFAULT_R_MIN) -> list[float]:
    """All quantized rates from r_min up to 1.0, ascending."""
    lo = rate_to_twentieths(r_min)
    return [round(k * RATE_STEP, 2) for k in range(lo, 21)]


def kept_count(r: float, units: int) -> int:
    """Kept neurons at rate r: units - floor((1-r)*units), by exact integer
    arithmetic on twentieths (equals ceil(r*units))."""
    k20 = rate_to_twentieths(r)
    return (k20 * units + 19) // 20


def drop_count(r: float, units: int) -> int:
    n = units - kept_count(r, units)
    if n >= units:
        raise RateError(f"rate {r} would empty a {units}-unit layer")
    return n


def percent_change(prev: np.ndarray, new: np.ndarray) -> float:
    """Relative L2 change of one neuron's weight set (row + bias):
    ||new - prev|| / max(||prev||, 1e-12)."""
    prev, new = np.asarray(prev, float).ravel(), np.asarray(new, float).ravel()
    if prev.shape != new.shape:
        raise InputError(f"neuron vectors differ in size: {prev.shape} vs {new.shape}")
    denom = max(float(np.linalg.norm(prev)), ZERO_NORM_GUARD)
    return float(np.linalg.norm(new - prev)) / denom


@dataclass(frozen=True)
class UpdateStats:
    """Per-client relative update magnitudes for every hidden neuron.

    ``per_client[cid][j]`` is a float array of length K_j: the percent change
    of each neuron in hidden layer j for that client, all measured against the
    same previous global model.
    """

    per_client: Mapping[int, tuple[np.ndarray, ...]]

    def __post_init__(self) -> None:
        if not self.per_client:
            raise InputError("stats need at least one contributing client")

    @property
    def client_ids(self) -> list[int]:
        return sorted(self.per_client)

    @property
    def layer_count(self) -> int:
        return len(next(iter(self.per_client.values())))

    def layer_matrix(self, j: int) -> np.ndarray:
        """[n_clients, K_j] percent changes, client rows in id order."""
        return np.stack([self.per_client[c][j] for c in self.client_ids])

    def mean_change(self, j: int) -> np.ndarray:
        return self.layer_matrix(j).mean(axis=0)


def collect_update_stats(
    prev_global: ModelParams, full_client_models: Sequence[tuple[int, ModelParams]]
) -> UpdateStats:
    """Percent change of every hidden neuron for each listed full-model client."""
    if not full_client_models:
        raise InputError("no client models given")
    n_hidden = len(prev_global.layers) - 1
    per_client: dict[int, tuple[np.ndarray, ...]] = {}
    for cid, model in full_client_models:
        if model.layer_sizes != prev_global.layer_sizes:
            raise InputError(f"client {cid} model shape differs from the global model")
        rows = []
        for j in range(n_hidden):
            prev = np.hstack(
                [prev_global.layers[j].weights, prev_global.layers[j].biases[:, None]]
            )
            new = np.hstack(
                [model.layers[j].weights, model.layers[j].biases[:, None]]
            )
            diff = np.linalg.norm(new - prev, axis=1)
            base = np.maximum(np.linalg.norm(prev, axis=1), ZERO_NORM_GUARD)
            rows.append(diff / base)
        per_client[cid] = tuple(rows)
    return UpdateStats(per_client)


def majority_invariant(
    stats: UpdateStats, thresholds: Sequence[float]
) -> list[np.ndarray]:
    """Per hidden layer, flag neurons whose change is <= the layer threshold
    for strictly more than half of the contributing clients."""
    n_clients = len(stats.client_ids)
    flags = []
    for j, d in enumerate(thresholds):
        below = stats.layer_matrix(j) <= d
        flags.append(below.sum(axis=0) > n_clients / 2)
    return flags


def init_thresholds(first_iter_stats: UpdateStats) -> list[float]:
    """Per layer: mean over clients of that client's smallest neuron change."""
    out = []
    for j in range(first_iter_stats.layer_count):
        out.append(float(first_iter_stats.layer_matrix(j).min(axis=1).mean()))
    return out


@dataclass(frozen=True)
class ThresholdState:
    """Per-layer drop thresholds plus warmup counter and invariance streaks."""

    thresholds: tuple[float, ...]
    warmup_remaining: int
    streaks: tuple[np.ndarray, ...]  # int arrays, one per hidden layer

    @staticmethod
    def initial(
        first_iter_stats: UpdateStats,
        hidden: Sequence[int],
        warmup: int = DEFAULT_WARMUP,
    ) -> "ThresholdState":
        return ThresholdState(
            thresholds=tuple(init_thresholds(first_iter_stats)),
            warmup_remaining=warmup,
            streaks=tuple(np.zeros(k, dtype=int) for k in hidden),
        )


def update_thresholds(
    state: ThresholdState,
    stats: UpdateStats,
    needed_per_layer: Sequence[int],
    growth: float = DEFAULT_GROWTH,
) -> ThresholdState:
    """One controller step: update streaks against the current thresholds,
    then (after warmup) grow any layer's threshold by ``growth`` while its
    majority-invariant count is still below the drop demand. Thresholds never
    decrease; at most one growth per layer per call.
    """
    flags = majority_invariant(stats, state.thresholds)
    streaks = tuple(
        np.where(f, s + 1, 0) for f, s in zip(flags, state.streaks)
    )
    if state.warmup_remaining > 0:
        return ThresholdState(state.thresholds, state.warmup_remaining - 1, streaks)
    thresholds = tuple(
        d * growth if int(f.sum()) < need else d
        for d, f, need in zip(state.thresholds, flags, needed_per_layer)
    )
    return ThresholdState(thresholds, 0, streaks)


def invariant_mask(
    state: ThresholdState,
    stats: UpdateStats,
    layer_sizes: Sequence[int],
    r: float,
) -> NeuronMask:
    """Drop floor((1-r)*K_j) neurons per hidden layer, preferring flagged
    (majority-invariant) neurons with the longest streaks, then the smallest
    mean change; ties go to the lower neuron index. If flagged candidates run
    out, the remaining drops take the smallest-mean-change unflagged neurons.
    """
    flags = majority_invariant(stats, state.thresholds)
    kept: list[tuple[int, ...]] = []
    for j, units in enumerate(hidden_sizes(layer_sizes)):
        n_drop = drop_count(r, units)
        mean_pc = stats.mean_change(j)
        flagged = [i for i in range(units) if flags[j][i]]
        flagged.sort(key=lambda i: (-int(state.streaks[j][i]), mean_pc[i], i))
        rest = [i for i in range(units) if not flags[j][i]]
        rest.sort(key=lambda i: (mean_pc[i], i))
        dropped = set((flagged + rest)[:n_drop])
        kept.append(tuple(i for i in range(units) if i not in dropped))
    return NeuronMask(tuple(kept))


def random_mask(layer_sizes: Sequence[int], r: float, seed: int) -> NeuronMask:
    """Uniform sample (without replacement) of the kept neurons per layer."""
    rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
    kept = []
    for units in hidden_sizes(layer_sizes):
        n_keep = units - drop_count(r, units)
        idx = rng.choice(units, size=n_keep, replace=False)
        kept.append(tuple(sorted(int(i) for i in idx)))
    return NeuronMask(tuple(kept))


def ordered_mask(layer_sizes: Sequence[int], r: float) -> NeuronMask:
    """Keep the contiguous prefix {0..ceil(r*K)-1} of every hidden layer."""
    return NeuronMask(
        tuple(tuple(range(kept_count(r, units))) for units in hidden_sizes(layer_sizes))
    )


def invariant_fraction(stats: UpdateStats, thresholds: Sequence[float]) -> float:
    """Fraction of all hidden neurons that are majority-invariant at the
    given thresholds."""
    flags = majority_invariant(stats, thresholds)
    total = sum(f.size for f in flags)
    return float(sum(int(f.sum()) for f in flags)) / total

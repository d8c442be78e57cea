"""Synchronous federated-averaging simulator with heterogeneous clients.

Each round every client trains locally and the server waits for all of them,
so the round time is the maximum simulated client time. Stragglers (the
slowest clients) are assigned sub-models sized so their per-round time lands
near the slowest non-straggler's time T_target; which neurons they lose is
decided by the configured dropout method. Client compute cost is modeled as
linear in active parameter count (see simulate_time), isolated here so a
measured cost model can replace it.

Timeline: round 1 profiles every client on the full model and initializes the
drop thresholds; rates are chosen once from the profile and frozen; rounds
2..R train stragglers on sub-models. Update statistics always come from
non-stragglers only, which train the full model every round.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, InputError
from .nn import DataBatch, Hyperparams, ModelParams, evaluate, init_model, local_train
from .strategies import (
    DEFAULT_GROWTH,
    DEFAULT_R_MIN,
    DEFAULT_WARMUP,
    ThresholdState,
    UpdateStats,
    collect_update_stats,
    drop_count,
    invariant_fraction,
    invariant_mask,
    ordered_mask,
    random_mask,
    rate_grid,
    rate_to_twentieths,
    update_thresholds,
)
from .submodel import (
    CoordinateUpdate,
    NeuronMask,
    aggregate,
    cost_fraction,
    extract_submodel,
    full_mask,
    hidden_sizes,
)

logger = logging.getLogger(__name__)

METHODS = ("none", "random", "ordered", "invariant")

# Stream tags keep the derived RNG streams for different purposes independent.
_STREAM_TRAIN = 0
_STREAM_MASK = 1
_STREAM_INIT = 2


def derive_seed(*parts: int) -> int:
    """Deterministic 64-bit seed from a tuple of integers (order-sensitive)."""
    ss = np.random.SeedSequence([int(p) & 0xFFFFFFFFFFFFFFFF for p in parts])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class ClientProfile:
    """One simulated client: identity, speed, and private data shards."""

    id: int
    base_time_s: float  # simulated seconds per round on the FULL model
    shard: DataBatch
    eval_shard: DataBatch

    def __post_init__(self) -> None:
        if self.id < 0:
            raise ConfigError("client id must be nonnegative")
        if not self.base_time_s > 0:
            raise ConfigError(f"client {self.id}: base_time_s must be positive")


@dataclass(frozen=True)
class StrategyParams:
    """Knobs of the threshold controller and rate selection."""

    warmup: int = DEFAULT_WARMUP
    growth: float = DEFAULT_GROWTH
    r_min: float = DEFAULT_R_MIN
    fixed_rate: float | None = None  # force this r, skipping choose_rate

    def __post_init__(self) -> None:
        if self.warmup < 0:
            raise ConfigError("warmup must be >= 0")
        if not self.growth > 1.0:
            raise ConfigError("threshold growth factor must be > 1")
        rate_to_twentieths(self.r_min)
        if self.fixed_rate is not None:
            rate_to_twentieths(self.fixed_rate)


@dataclass(frozen=True)
class SimConfig:
    """Everything one simulated experiment needs."""

    layer_sizes: tuple[int, ...]
    profiles: tuple[ClientProfile, ...]
    method: str
    rounds: int
    hyper: Hyperparams
    strategy: StrategyParams = StrategyParams()
    seed: int = 0
    straggler_fraction: float = 0.0  # 0 means single slowest client
    straggler_ids: tuple[int, ...] | None = None  # explicit override; () = none
    target_slack: float = 0.10

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if len(self.profiles) < 2:
            raise ConfigError("need at least 2 client profiles")
        ids = [p.id for p in self.profiles]
        if len(set(ids)) != len(ids):
            raise ConfigError("client ids must be unique")
        if not 0 <= self.straggler_fraction < 1:
            raise ConfigError("straggler_fraction must be in [0, 1)")
        if self.target_slack < 0:
            raise ConfigError("target_slack must be >= 0")
        if self.straggler_ids is not None:
            sids = set(self.straggler_ids)
            if len(sids) != len(self.straggler_ids):
                raise ConfigError("straggler_ids contains duplicates")
            if not sids <= set(ids):
                raise ConfigError("straggler_ids must reference existing clients")
            if sids == set(ids):
                raise ConfigError("at least one client must remain a non-straggler")

    def profile_by_id(self, cid: int) -> ClientProfile:
        for p in self.profiles:
            if p.id == cid:
                return p
        raise InputError(f"unknown client id {cid}")


def profile_stragglers(
    times: Sequence[float], straggler_fraction: float
) -> tuple[tuple[int, ...], float]:
    """Pick straggler positions and the target time from per-client times.

    fraction 0 means single-straggler mode: the slowest client (ties to the
    lower index) is the straggler and T_target is the second-largest time.
    Otherwise the slowest ceil(fraction*N) clients are stragglers and T_target
    is the slowest remaining time.
    """
    n = len(times)
    if n < 2:
        raise ConfigError("need at least 2 clients to profile stragglers")
    if not 0 <= straggler_fraction < 1:
        raise ConfigError("straggler_fraction must be in [0, 1)")
    if straggler_fraction == 0:
        count = 1
    else:
        # round first so 0.1 * 30 = 3.0000000000000004 does not ceil to 4
        count = math.ceil(round(straggler_fraction * n, 9))
    if count >= n:
        raise ConfigError("straggler set would leave no non-straggler")
    order = sorted(range(n), key=lambda i: (-times[i], i))
    stragglers = tuple(sorted(order[:count]))
    t_target = max(times[i] for i in order[count:])
    return stragglers, t_target


def required_speedup(t_straggler: float, t_target: float) -> float:
    """How much faster the straggler must get to match the target time."""
    if t_straggler <= 0 or t_target <= 0:
        raise InputError("times must be positive")
    return t_straggler / t_target


@dataclass(frozen=True)
class RateChoice:
    r: float
    within_budget: bool  # False when even r_min misses the time budget


def choose_rate(
    profile: ClientProfile,
    t_target: float,
    layer_sizes: Sequence[int],
    *,
    target_slack: float = 0.10,
    r_min: float = DEFAULT_R_MIN,
) -> RateChoice:
    """Largest quantized rate whose sub-model keeps the straggler within
    T_target * (1 + slack). Parameter count only depends on how many neurons
    are kept, so a prefix mask stands in for any selection at the same rate.
    If even r_min misses the budget, return r_min as a best effort.
    """
    if t_target <= 0:
        raise InputError("t_target must be positive")
    budget = t_target * (1.0 + target_slack)
    for r in reversed(rate_grid(r_min)):
        cost = cost_fraction(layer_sizes, ordered_mask(layer_sizes, r))
        if profile.base_time_s * cost <= budget:
            return RateChoice(r, True)
    logger.warning(
        "client %d: rate floor %.2f still misses the %.3fs budget; using it anyway",
        profile.id,
        r_min,
        budget,
    )
    return RateChoice(r_min, False)


def simulate_time(
    profile: ClientProfile, mask: NeuronMask, layer_sizes: Sequence[int]
) -> float:
    """Simulated seconds for one local round: linear in active parameters."""
    return profile.base_time_s * cost_fraction(layer_sizes, mask)


@dataclass(frozen=True)
class RoundRecord:
    """Everything measured in one synchronous round."""

    round: int
    client_times_s: Mapping[int, float]
    straggler_ids: tuple[int, ...]
    rates: Mapping[int, float]  # straggler id -> rate in effect
    sim_round_time_s: float
    straggler_time_s: float
    target_time_s: float | None
    eval_loss: float
    eval_acc: float
    invariant_fraction: float
    thresholds: tuple[float, ...]

    def __post_init__(self) -> None:
        barrier = max(self.client_times_s.values())
        if abs(self.sim_round_time_s - barrier) > 1e-9:
            raise InputError("round time must equal the max client time")


@dataclass(frozen=True)
class RunState:
    """Coordinator state carried between rounds. ``round`` is the next round
    to run (1-based); round 1 is full-model profiling."""

    round: int
    global_model: ModelParams
    thresholds: ThresholdState | None
    stats: UpdateStats | None  # last round's non-straggler statistics
    straggler_ids: tuple[int, ...]
    t_target: float | None
    rates: Mapping[int, float]


def initial_state(config: SimConfig) -> RunState:
    if config.straggler_ids is not None:
        sids = tuple(sorted(config.straggler_ids))
        non = [p.base_time_s for p in config.profiles if p.id not in set(sids)]
        t_target = max(non) if sids else None
    else:
        times = [p.base_time_s for p in config.profiles]
        positions, t_target = profile_stragglers(times, config.straggler_fraction)
        sids = tuple(sorted(config.profiles[i].id for i in positions))
    model = init_model(config.layer_sizes, derive_seed(config.seed, _STREAM_INIT))
    return RunState(
        round=1,
        global_model=model,
        thresholds=None,
        stats=None,
        straggler_ids=sids,
        t_target=t_target,
        rates={},
    )


def _build_masks(state: RunState, config: SimConfig) -> dict[int, NeuronMask]:
    """Per-straggler masks for this round. Round 1 and method "none" use full
    models everywhere; non-stragglers always train the full model."""
    if state.round == 1 or config.method == "none":
        return {}
    masks: dict[int, NeuronMask] = {}
    for cid in state.straggler_ids:
        r = state.rates[cid]
        if r == 1.0:
            masks[cid] = full_mask(config.layer_sizes)
        elif config.method == "random":
            masks[cid] = random_mask(
                config.layer_sizes, r, derive_seed(config.seed, _STREAM_MASK, state.round, cid)
            )
        elif config.method == "ordered":
            masks[cid] = ordered_mask(config.layer_sizes, r)
        else:
            masks[cid] = invariant_mask(
                state.thresholds, state.stats, config.layer_sizes, r
            )
    return masks


def _needed_per_layer(state: RunState, config: SimConfig) -> list[int]:
    """Drop demand per hidden layer: the largest drop count any straggler's
    rate requires (zero with no stragglers or method "none")."""
    hidden = hidden_sizes(config.layer_sizes)
    if not state.rates:
        return [0] * len(hidden)
    return [
        max(drop_count(r, units) for r in state.rates.values()) for units in hidden
    ]


def _weighted_eval(model: ModelParams, config: SimConfig) -> tuple[float, float]:
    """Loss and accuracy as example-count-weighted means over client eval shards."""
    total = sum(p.eval_shard.n for p in config.profiles)
    loss = acc = 0.0
    for p in config.profiles:
        shard_loss, shard_acc = evaluate(model, p.eval_shard)
        loss += p.eval_shard.n * shard_loss
        acc += p.eval_shard.n * shard_acc
    return loss / total, acc / total


def run_round(state: RunState, config: SimConfig) -> tuple[RunState, RoundRecord]:
    """One synchronous round: mask, train, collect stats, update thresholds,
    aggregate, evaluate. Returns the advanced state and the round's record."""
    t = state.round
    straggler_set = set(state.straggler_ids)
    masks = _build_masks(state, config)

    updates: list[CoordinateUpdate] = []
    full_models: list[tuple[int, ModelParams]] = []
    times: dict[int, float] = {}
    for p in config.profiles:
        mask = masks.get(p.id, full_mask(config.layer_sizes))
        local = extract_submodel(state.global_model, mask)
        hp = replace(config.hyper, seed=derive_seed(config.seed, _STREAM_TRAIN, t, p.id))
        trained, n_examples, _ = local_train(local, p.shard, hp)
        updates.append(CoordinateUpdate(mask, trained, n_examples))
        times[p.id] = simulate_time(p, mask, config.layer_sizes)
        if p.id not in straggler_set:
            full_models.append((p.id, trained))

    stats = collect_update_stats(state.global_model, full_models)
    if t == 1:
        thresholds_in_effect = ThresholdState.initial(
            stats, hidden_sizes(config.layer_sizes), warmup=config.strategy.warmup
        )
        new_thresholds = thresholds_in_effect
    else:
        thresholds_in_effect = state.thresholds
        new_thresholds = update_thresholds(
            state.thresholds, stats, _needed_per_layer(state, config), config.strategy.growth
        )

    new_global = aggregate(state.global_model, updates)
    eval_loss, eval_acc = _weighted_eval(new_global, config)

    rates = dict(state.rates)
    if t == 1 and state.straggler_ids and config.method != "none":
        for cid in state.straggler_ids:
            if config.strategy.fixed_rate is not None:
                rates[cid] = config.strategy.fixed_rate
            else:
                rates[cid] = choose_rate(
                    config.profile_by_id(cid),
                    state.t_target,
                    config.layer_sizes,
                    target_slack=config.target_slack,
                    r_min=config.strategy.r_min,
                ).r

    straggler_time = (
        max(times[cid] for cid in state.straggler_ids)
        if state.straggler_ids
        else max(times.values())
    )
    record = RoundRecord(
        round=t,
        client_times_s=times,
        straggler_ids=state.straggler_ids,
        rates=dict(state.rates),
        sim_round_time_s=max(times.values()),
        straggler_time_s=straggler_time,
        target_time_s=state.t_target,
        eval_loss=eval_loss,
        eval_acc=eval_acc,
        invariant_fraction=invariant_fraction(stats, thresholds_in_effect.thresholds),
        thresholds=new_thresholds.thresholds,
    )
    new_state = RunState(
        round=t + 1,
        global_model=new_global,
        thresholds=new_thresholds,
        stats=stats,
        straggler_ids=state.straggler_ids,
        t_target=state.t_target,
        rates=rates,
    )
    return new_state, record


RoundObserver = Callable[[RunState, RoundRecord], None]


def run_experiment(
    config: SimConfig, on_round: RoundObserver | None = None
) -> tuple[list[RoundRecord], dict]:
    """Run all rounds and summarize: best accuracy is taken at the round with
    the lowest weighted eval loss (ties to the earliest round)."""
    state = initial_state(config)
    records: list[RoundRecord] = []
    for _ in range(config.rounds):
        state, record = run_round(state, config)
        records.append(record)
        if on_round is not None:
            on_round(state, record)
    best = min(records, key=lambda rec: (rec.eval_loss, rec.round))
    last = records[-1]
    ratio = None
    if state.straggler_ids and state.t_target and len(records) > 1:
        ratio = last.straggler_time_s / state.t_target
    summary = {
        "best_acc": best.eval_acc,
        "best_round": best.round,
        "min_eval_loss": best.eval_loss,
        "total_sim_time_s": sum(rec.sim_round_time_s for rec in records),
        "straggler_target_ratio": ratio,
        "rates": {str(cid): r for cid, r in sorted(state.rates.items())},
        "final_thresholds": list(last.thresholds),
    }
    return records, summary

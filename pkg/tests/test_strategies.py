"""Dropout policies: percent change, majority voting, threshold controller,
and the three mask generators."""

from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import model_from
from feddropsim import (
    InputError,
    NeuronMask,
    RateError,
    ThresholdState,
    UpdateStats,
    collect_update_stats,
    init_thresholds,
    invariant_fraction,
    invariant_mask,
    majority_invariant,
    ordered_mask,
    percent_change,
    random_mask,
    update_thresholds,
)
from feddropsim.strategies import drop_count, kept_count, rate_grid, rate_to_twentieths


def stats_of(*clients: list[list[float]]) -> UpdateStats:
    """Build stats from per-client lists of per-layer change vectors."""
    return UpdateStats(
        {
            cid: tuple(np.asarray(layer, dtype=float) for layer in layers)
            for cid, layers in enumerate(clients)
        }
    )


def test_rate_quantization_grid():
    assert rate_to_twentieths(0.05) == 1
    assert rate_to_twentieths(0.5) == 10
    assert rate_to_twentieths(1.0) == 20
    for bad in (0.0, -0.5, 1.05, 0.33, 0.52):
        with pytest.raises(RateError):
            rate_to_twentieths(bad)
    assert rate_grid(0.5) == [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95, 1.0]


def test_kept_and_drop_counts_use_exact_integer_arithmetic():
    # float arithmetic would give floor((1-0.9)*10) = floor(0.999...) traps
    assert kept_count(0.9, 10) == 9 and drop_count(0.9, 10) == 1
    assert kept_count(0.75, 10) == 8 and drop_count(0.75, 10) == 2
    assert kept_count(0.05, 10) == 1
    for k20 in range(1, 21):
        r = k20 / 20
        for units in range(1, 101):
            # floor((1-r)*units) with exact rationals
            assert drop_count(r, units) == ((20 - k20) * units) // 20
            assert kept_count(r, units) == units - ((20 - k20) * units) // 20
            assert kept_count(r, units) >= 1


def test_percent_change_cases():
    assert percent_change(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
    assert percent_change(np.array([3.0, 4.0]), np.array([6.0, 8.0])) == pytest.approx(1.0)
    huge = percent_change(np.zeros(3), np.array([1.0, 0.0, 0.0]))
    assert huge == pytest.approx(1e12)  # zero-norm guard: varies maximally
    with pytest.raises(InputError):
        percent_change(np.zeros(3), np.zeros(4))


def test_collect_update_stats_hand_case():
    prev = model_from(
        ([[3.0, 0.0], [0.0, 4.0]], [4.0, 3.0]),
        ([[1.0, 1.0]], [0.0]),
    )
    moved = model_from(
        ([[6.0, 0.0], [0.0, 4.0]], [8.0, 3.0]),  # neuron 0 doubles, neuron 1 frozen
        ([[1.0, 1.0]], [0.0]),
    )
    stats = collect_update_stats(prev, [(0, moved), (1, prev)])
    assert stats.client_ids == [0, 1]
    np.testing.assert_allclose(stats.per_client[0][0], [1.0, 0.0])
    np.testing.assert_allclose(stats.per_client[1][0], [0.0, 0.0])
    np.testing.assert_allclose(stats.mean_change(0), [0.5, 0.0])
    with pytest.raises(InputError):
        collect_update_stats(prev, [])
    wrong_shape = model_from(([[1.0, 0.0]], [0.0]), ([[1.0]], [0.0]))
    with pytest.raises(InputError):
        collect_update_stats(prev, [(0, wrong_shape)])


def test_majority_is_strict():
    three = stats_of([[0.1]], [[0.1]], [[0.9]])
    assert majority_invariant(three, [0.5])[0].tolist() == [True]  # 2 of 3
    two = stats_of([[0.1]], [[0.9]])
    assert majority_invariant(two, [0.5])[0].tolist() == [False]  # 1 of 2 is not > half
    assert majority_invariant(two, [0.95])[0].tolist() == [True]
    nonzero = stats_of([[0.2, 0.3]])
    assert majority_invariant(nonzero, [0.0])[0].tolist() == [False, False]


def test_init_thresholds_mean_of_per_client_layer_minima():
    stats = stats_of(
        [[0.1, 0.7], [0.4, 0.2]],
        [[0.2, 0.9], [0.6, 0.6]],
    )
    assert init_thresholds(stats) == pytest.approx([0.15, 0.4])
    single = stats_of([[0.3, 0.5], [0.7, 0.2]])
    assert init_thresholds(single) == pytest.approx([0.3, 0.2])
    constant = stats_of([[0.25, 0.25], [0.25, 0.25]])
    assert init_thresholds(constant) == pytest.approx([0.25, 0.25])


def controller(changes: list[float], warmup: int = 0) -> ThresholdState:
    stats = stats_of([changes])
    return ThresholdState.initial(stats, hidden=[len(changes)], warmup=warmup)


def test_warmup_holds_thresholds_still():
    stats = stats_of([[0.1, 0.2, 0.9]])
    state = controller([0.1, 0.2, 0.9], warmup=3)
    d0 = state.thresholds
    for expected_remaining in (2, 1, 0):
        state = update_thresholds(state, stats, needed_per_layer=[2], growth=1.1)
        assert state.thresholds == d0
        assert state.warmup_remaining == expected_remaining
    state = update_thresholds(state, stats, [2], growth=1.1)
    assert state.thresholds[0] == pytest.approx(d0[0] * 1.1)


def test_geometric_growth_until_demand_met():
    stats = stats_of([[0.1, 0.2, 0.9]])
    state = controller([0.1, 0.2, 0.9])  # d0 = 0.1
    grown = 0
    for _ in range(40):
        before = state.thresholds[0]
        state = update_thresholds(state, stats, [2], growth=1.1)
        if state.thresholds[0] > before:
            grown += 1
        else:
            break
    # needs d >= 0.2: 0.1 * 1.1^8 ~ 0.214 is the first grid point past it
    assert grown == 8
    assert state.thresholds[0] == pytest.approx(0.1 * 1.1**8)
    # stable afterwards
    after = update_thresholds(state, stats, [2], growth=1.1)
    assert after.thresholds == state.thresholds


def test_zero_demand_never_grows_and_thresholds_never_shrink():
    stats = stats_of([[0.5, 0.6]])
    state = controller([0.5, 0.6])
    seen = [state.thresholds[0]]
    for _ in range(5):
        state = update_thresholds(state, stats, [0], growth=2.0)
        seen.append(state.thresholds[0])
    assert all(b >= a for a, b in zip(seen, seen[1:]))
    assert seen[0] == seen[-1]


def test_per_layer_thresholds_evolve_independently():
    stats = stats_of([[0.1, 0.9], [0.1, 0.1]])
    state = ThresholdState.initial(stats, hidden=[2, 2], warmup=0)
    state = update_thresholds(state, stats, [2, 1], growth=1.5)
    # layer 0 has 1 invariant neuron < needed 2 -> grows; layer 1 has 2 >= 1
    assert state.thresholds[0] == pytest.approx(0.1 * 1.5)
    assert state.thresholds[1] == pytest.approx(0.1)


def test_streaks_count_consecutive_invariant_rounds():
    quiet = stats_of([[0.01, 0.9]])
    noisy = stats_of([[0.8, 0.9]])
    state = controller([0.01, 0.9])
    for t in (1, 2, 3):
        state = update_thresholds(state, quiet, [0], growth=1.1)
        assert state.streaks[0].tolist() == [t, 0]
    state = update_thresholds(state, noisy, [0], growth=1.1)
    assert state.streaks[0].tolist() == [0, 0]  # reset on a non-invariant round


def test_invariant_mask_prefers_long_streaks_then_small_changes():
    stats = stats_of([[0.5, 0.5, 0.5, 0.5]])
    state = ThresholdState(
        thresholds=(1.0,),  # everything is majority-invariant
        warmup_remaining=0,
        streaks=(np.array([5, 0, 2, 0]),),
    )
    mask = invariant_mask(state, stats, (3, 4, 2), r=0.5)
    assert mask.kept == ((1, 3),)  # streaks 5 and 2 dropped first


def test_invariant_mask_falls_back_to_smallest_mean_change():
    stats = stats_of([[0.9, 0.05, 0.6, 0.7]])
    state = ThresholdState(
        thresholds=(0.1,),  # only neuron 1 is invariant
        warmup_remaining=0,
        streaks=(np.zeros(4, dtype=int),),
    )
    mask = invariant_mask(state, stats, (3, 4, 2), r=0.5)
    # drop invariant neuron 1 first, then neuron 2 (smallest remaining change)
    assert mask.kept == ((0, 3),)


def test_invariant_mask_drop_counts_and_full_rate():
    stats = stats_of([list(np.linspace(0.1, 1.0, 10))])
    state = ThresholdState((0.05,), 0, (np.zeros(10, dtype=int),))
    assert invariant_mask(state, stats, (3, 10, 2), r=1.0).kept == (tuple(range(10)),)
    assert len(invariant_mask(state, stats, (3, 10, 2), r=0.75).kept[0]) == 8


def test_random_mask_determinism_and_counts():
    sizes = (3, 10, 7, 2)
    a = random_mask(sizes, 0.5, seed=123)
    b = random_mask(sizes, 0.5, seed=123)
    c = random_mask(sizes, 0.5, seed=124)
    assert a == b
    assert a != c
    assert [len(k) for k in a.kept] == [kept_count(0.5, 10), kept_count(0.5, 7)]
    assert random_mask(sizes, 1.0, seed=5) == NeuronMask((tuple(range(10)), tuple(range(7))))


def test_random_mask_is_roughly_uniform():
    counts = np.zeros(10)
    draws = 10_000
    for s in range(draws):
        counts[list(random_mask((3, 10, 2), 0.5, seed=s).kept[0])] += 1
    freq = counts / draws
    assert np.all(np.abs(freq - 0.5) < 0.02)


def test_ordered_mask_is_a_prefix():
    assert ordered_mask((3, 10, 2), 0.75).kept == (tuple(range(8)),)  # ceil(7.5)
    assert ordered_mask((3, 10, 2), 1.0).kept == (tuple(range(10)),)
    for r in rate_grid(0.05):
        for units in (1, 3, 10, 64):
            kept = ordered_mask((2, units, 2), r).kept[0]
            assert kept == tuple(range(len(kept)))  # contiguous from 0


def test_all_generators_drop_identical_counts():
    stats = stats_of([list(np.linspace(0.0, 1.0, 12))])
    state = ThresholdState((0.5,), 0, (np.zeros(12, dtype=int),))
    for r in (0.5, 0.65, 0.9):
        n_inv = len(invariant_mask(state, stats, (4, 12, 3), r).kept[0])
        n_rand = len(random_mask((4, 12, 3), r, seed=0).kept[0])
        n_ord = len(ordered_mask((4, 12, 3), r).kept[0])
        assert n_inv == n_rand == n_ord == kept_count(r, 12)


def test_invariant_fraction_extremes_and_monotonicity():
    stats = stats_of([[0.1, 0.4], [0.3, 0.2]], [[0.2, 0.5], [0.1, 0.6]])
    assert invariant_fraction(stats, [1e9, 1e9]) == 1.0
    assert invariant_fraction(stats, [0.0, 0.0]) == 0.0
    rng = np.random.default_rng(7)
    for _ in range(50):
        lo = rng.uniform(0, 0.7, size=2)
        hi = lo + rng.uniform(0, 0.7, size=2)
        assert invariant_fraction(stats, list(lo)) <= invariant_fraction(stats, list(hi))


def test_invariant_fraction_worked_value():
    # layer of 4 neurons, 3 clients; threshold 0.25 flags a strict majority
    stats = stats_of(
        [[0.1, 0.9, 0.2, 0.9]],
        [[0.2, 0.2, 0.3, 0.9]],
        [[0.3, 0.1, 0.2, 0.9]],
    )
    # below 0.25 per neuron: {c0,c1}, {c1,c2}, {c0,c2}, {} -> 3 of 4 invariant
    assert invariant_fraction(stats, [0.25]) == pytest.approx(0.75)

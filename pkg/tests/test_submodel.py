"""Sub-model extraction, parameter costing, and masked aggregation."""

from __future__ import annotations

import numpy as np
import pytest

from conftest import model_from, models_equal
from feddropsim import (
    AggregationError,
    CoordinateUpdate,
    MaskError,
    NeuronMask,
    aggregate,
    cost_fraction,
    extract_submodel,
    full_mask,
    init_model,
    masked_param_count,
)


def two_two_two(scale: float = 1.0):
    return model_from(
        (scale * np.array([[1.0, 2.0], [3.0, 4.0]]), scale * np.array([5.0, 6.0])),
        (scale * np.array([[7.0, 8.0], [9.0, 10.0]]), scale * np.array([11.0, 12.0])),
    )


def test_mask_validation():
    with pytest.raises(MaskError):
        NeuronMask(((),))  # would keep nothing
    with pytest.raises(MaskError):
        NeuronMask(((1, 1),))
    with pytest.raises(MaskError):
        NeuronMask(((2, 1),))
    with pytest.raises(MaskError):
        NeuronMask(((-1, 0),))
    NeuronMask(((0, 3, 7), (1,)))  # fine


def test_full_mask_extraction_is_identity():
    model = init_model((3, 5, 4, 2), seed=1)
    sub = extract_submodel(model, full_mask(model.layer_sizes))
    assert models_equal(sub, model)


def test_hand_extraction_keeps_row_bias_and_outgoing_column():
    model = two_two_two()
    sub = extract_submodel(model, NeuronMask(((1,),)))
    assert np.array_equal(sub.layers[0].weights, [[3.0, 4.0]])
    assert np.array_equal(sub.layers[0].biases, [6.0])
    assert np.array_equal(sub.layers[1].weights, [[8.0], [10.0]])
    assert np.array_equal(sub.layers[1].biases, [11.0, 12.0])
    assert sub.layer_sizes == (2, 1, 2)


def test_extraction_mask_errors():
    model = two_two_two()
    with pytest.raises(MaskError):
        extract_submodel(model, NeuronMask(((2,),)))  # out of range
    with pytest.raises(MaskError):
        extract_submodel(model, NeuronMask(((0,), (0,))))  # too many layers


def test_masked_param_count_and_cost_fraction():
    # (2,2,2) keeping 1 hidden neuron: 1*2+1 kept-layer params, 2*1+2 output
    assert masked_param_count((2, 2, 2), [1]) == 7
    assert masked_param_count((2, 2, 2), [2]) == 12
    assert cost_fraction((2, 2, 2), NeuronMask(((0,),))) == pytest.approx(7 / 12)
    assert cost_fraction((2, 2, 2), full_mask((2, 2, 2))) == 1.0


def test_masked_param_count_matches_extracted_submodel():
    rng = np.random.default_rng(0)
    model = init_model((3, 8, 6, 4), seed=2)
    for _ in range(25):
        kept = tuple(
            tuple(sorted(rng.choice(k, size=rng.integers(1, k + 1), replace=False)))
            for k in (8, 6)
        )
        mask = NeuronMask(tuple(tuple(int(i) for i in idx) for idx in kept))
        sub = extract_submodel(model, mask)
        assert sub.param_count() == masked_param_count(
            (3, 8, 6, 4), [len(k) for k in mask.kept]
        )


def test_cost_fraction_monotone_in_kept_counts():
    sizes = (5, 10, 10, 3)
    costs = [
        masked_param_count(sizes, [k, k]) for k in range(1, 11)
    ]
    assert costs == sorted(costs)
    assert masked_param_count(sizes, [10, 10]) == 10 * 5 + 10 + 10 * 10 + 10 + 3 * 10 + 3


def test_aggregate_weighted_mean_of_full_updates():
    base = two_two_two(0.0)
    a = CoordinateUpdate(full_mask((2, 2, 2)), two_two_two(1.0), 1)
    b = CoordinateUpdate(full_mask((2, 2, 2)), two_two_two(2.0), 3)
    merged = aggregate(base, [a, b])
    # (1*x + 3*2x) / 4 = 1.75x, exact in binary
    assert models_equal(merged, two_two_two(1.75))


def test_aggregate_single_unit_weight_update_is_exact():
    base = two_two_two(0.0)
    update = CoordinateUpdate(full_mask((2, 2, 2)), two_two_two(1.0), 1)
    assert models_equal(aggregate(base, [update]), two_two_two(1.0))


def test_aggregate_partial_update_only_touches_covered_coordinates():
    base = two_two_two(1.0)
    sub = extract_submodel(base, NeuronMask(((1,),)))
    doubled = model_from(
        (2 * sub.layers[0].weights, 2 * sub.layers[0].biases),
        (2 * sub.layers[1].weights, 2 * sub.layers[1].biases),
    )
    merged = aggregate(base, [CoordinateUpdate(NeuronMask(((1,),)), doubled, 4)])
    assert np.array_equal(merged.layers[0].weights, [[1.0, 2.0], [6.0, 8.0]])
    assert np.array_equal(merged.layers[0].biases, [5.0, 12.0])
    # output layer: column 1 (from kept neuron 1) covered, column 0 not;
    # output biases always covered by any update
    assert np.array_equal(merged.layers[1].weights, [[7.0, 16.0], [9.0, 20.0]])
    assert np.array_equal(merged.layers[1].biases, [22.0, 24.0])


def test_aggregate_round_trip_of_unchanged_submodel_is_identity():
    model = init_model((3, 6, 4, 2), seed=9)
    mask = NeuronMask(((0, 2, 5), (1, 3)))
    sub = extract_submodel(model, mask)
    merged = aggregate(model, [CoordinateUpdate(mask, sub, 1)])
    assert models_equal(merged, model)


def test_aggregate_mixed_full_and_partial_hand_case():
    base = two_two_two(0.0)
    full = CoordinateUpdate(full_mask((2, 2, 2)), two_two_two(1.0), 1)
    partial_model = extract_submodel(two_two_two(3.0), NeuronMask(((0,),)))
    partial = CoordinateUpdate(NeuronMask(((0,),)), partial_model, 1)
    merged = aggregate(base, [full, partial])
    # hidden row 0 covered by both -> mean of x and 3x = 2x; row 1 only by full
    assert np.array_equal(merged.layers[0].weights, [[2.0, 4.0], [3.0, 4.0]])
    assert np.array_equal(merged.layers[0].biases, [10.0, 6.0])
    # output col 0 covered by both, col 1 only by the full update
    assert np.array_equal(merged.layers[1].weights, [[14.0, 8.0], [18.0, 10.0]])
    assert np.array_equal(merged.layers[1].biases, [22.0, 24.0])


def test_aggregate_is_permutation_invariant_bitwise():
    rng = np.random.default_rng(4)
    model = init_model((3, 7, 5, 2), seed=3)
    updates = []
    for i in range(6):
        kept = tuple(
            tuple(int(v) for v in sorted(rng.choice(k, size=rng.integers(1, k + 1), replace=False)))
            for k in (7, 5)
        )
        mask = NeuronMask(kept)
        sub = extract_submodel(model, mask)
        noisy = model_from(
            *[(l.weights + rng.normal(size=l.weights.shape), l.biases + rng.normal(size=l.biases.shape)) for l in sub.layers]
        )
        updates.append(CoordinateUpdate(mask, noisy, int(rng.integers(1, 50))))
    reference = aggregate(model, updates)
    for _ in range(10):
        perm = list(rng.permutation(len(updates)))
        shuffled = [updates[i] for i in perm]
        assert models_equal(aggregate(model, shuffled), reference)


def test_aggregate_shape_and_input_errors():
    base = two_two_two()
    with pytest.raises(AggregationError):
        aggregate(base, [])
    with pytest.raises(AggregationError):
        CoordinateUpdate(full_mask((2, 2, 2)), two_two_two(), 0)
    wrong = extract_submodel(base, NeuronMask(((0,),)))
    with pytest.raises(AggregationError):
        aggregate(base, [CoordinateUpdate(full_mask((2, 2, 2)), wrong, 1)])

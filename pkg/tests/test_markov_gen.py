import math

import numpy as np
import pytest

from distill_lab.core.errors import InvariantViolation
from distill_lab.sandbox.markov_gen import (
    EntropyClass,
    SequenceDataset,
    TransitionMatrix,
    TriggerSpec,
    apply_trigger,
    boost_triggers,
    build_matrix,
    build_sparse_matrix,
    choose_triggers,
    class_plan_from_fractions,
    derive_seed,
    empirical_row_counts,
    load_dataset,
    load_matrix,
    sample_pairs,
    sample_sequences,
    save_dataset,
    save_matrix,
    trigger_violations,
)
from distill_lab.sandbox.tabular_bigram import fit_scratch

from .conftest import MIXED_PLAN_16


def test_rows_land_in_planned_classes(mixed_matrix):
    assert list(mixed_matrix.entropy_class) == MIXED_PLAN_16
    assert np.allclose(mixed_matrix.rows.sum(axis=1), 1.0, atol=1e-12)
    low = mixed_matrix.rows_in_class(EntropyClass.LOW)
    assert all(3 <= s <= 5 for s in mixed_matrix.row_sparsity[low])


def test_build_is_deterministic(mixed_matrix):
    again = build_matrix(16, MIXED_PLAN_16, seed=7)
    assert again == mixed_matrix
    assert again.matrix_id == mixed_matrix.matrix_id
    assert build_matrix(16, MIXED_PLAN_16, seed=8) != mixed_matrix


def test_high_entropy_rows_are_near_uniform():
    matrix = build_matrix(64, [EntropyClass.HIGH] * 64, seed=0)
    assert np.all(matrix.entropies >= 0.9 * math.log(64))


def test_one_hot_row_has_zero_entropy():
    matrix = TransitionMatrix.from_rows([[1.0, 0.0], [0.5, 0.5]])
    assert matrix.entropies[0] == 0.0
    assert matrix.row_sparsity.tolist() == [1, 2]
    assert matrix.entropy_class[0] is EntropyClass.LOW


def test_invalid_matrices_rejected():
    with pytest.raises(InvariantViolation):
        build_matrix(1, [EntropyClass.LOW], seed=0)
    with pytest.raises(InvariantViolation):
        build_matrix(4, [EntropyClass.LOW] * 3, seed=0)
    with pytest.raises(InvariantViolation):
        TransitionMatrix.from_rows([[0.5, 0.4], [0.5, 0.5]])
    with pytest.raises(InvariantViolation):
        build_sparse_matrix(8, 9, seed=0)


def test_class_plan_proportions():
    plan = class_plan_from_fractions(64, {"low": 1 / 3, "medium": 1 / 3, "high": 1 / 3}, seed=1)
    counts = {c: plan.count(c) for c in EntropyClass}
    assert counts == {EntropyClass.LOW: 22, EntropyClass.MEDIUM: 21, EntropyClass.HIGH: 21}


def test_sparse_matrix_support():
    matrix = build_sparse_matrix(16, 3, seed=2)
    assert matrix.row_sparsity.tolist() == [3] * 16
    assert build_sparse_matrix(16, 1, seed=2).entropies.max() == 0.0


class TestApplyTrigger:
    def test_trigger_row_becomes_one_hot(self, mixed_matrix):
        modified = apply_trigger(mixed_matrix, 3, 9)
        expected = np.zeros(16)
        expected[9] = 1.0
        assert np.array_equal(modified.rows[3], expected)
        others = [i for i in range(16) if i != 3]
        assert np.array_equal(modified.rows[others], mixed_matrix.rows[others])

    def test_idempotent(self, mixed_matrix):
        once = apply_trigger(mixed_matrix, 3, 9)
        assert apply_trigger(once, 3, 9) == once

    def test_last_write_wins(self, mixed_matrix):
        both = apply_trigger(apply_trigger(mixed_matrix, 3, 9), 3, 4)
        assert both == apply_trigger(mixed_matrix, 3, 4)

    def test_out_of_range(self, mixed_matrix):
        with pytest.raises(InvariantViolation):
            apply_trigger(mixed_matrix, 16, 0)


def test_trigger_spec():
    spec = TriggerSpec((7, 2, 5))
    assert spec.tokens == (2, 5, 7)
    assert spec.mask(8).tolist() == [False, False, True, False, False, True, False, True]
    with pytest.raises(InvariantViolation):
        TriggerSpec((1, 1))
    with pytest.raises(InvariantViolation):
        spec.validate(6)
    with pytest.raises(InvariantViolation):
        choose_triggers(8, 8, seed=0)


def test_every_trigger_is_followed_by_its_copy_target(mixed_matrix, triggers):
    dataset = sample_sequences(mixed_matrix, triggers, n=300, length=32, seed=4)
    assert trigger_violations(dataset) == 0
    mask = triggers.mask(16)
    seq, pos = np.nonzero(mask[dataset.sequences[:, :-1]])
    assert seq.size > 0
    assert np.array_equal(dataset.sequences[seq, pos + 1], dataset.copy_targets[seq])


def test_per_trigger_targets(mixed_matrix, triggers):
    dataset = sample_sequences(mixed_matrix, triggers, n=200, length=32, seed=4, per_trigger_targets=True)
    assert dataset.copy_targets.shape == (200, triggers.count)
    assert trigger_violations(dataset) == 0


def test_tampered_dataset_fails_validation(mixed_matrix, triggers):
    dataset = sample_sequences(mixed_matrix, triggers, n=100, length=32, seed=4)
    seq, pos = np.nonzero(triggers.mask(16)[dataset.sequences[:, :-1]])
    tampered = dataset.sequences.copy()
    tampered[seq[0], pos[0] + 1] = (tampered[seq[0], pos[0] + 1] + 1) % 16
    broken = SequenceDataset(tampered, dataset.copy_targets, triggers, 16, dataset.source_matrix_id, dataset.seed)
    with pytest.raises(InvariantViolation):
        broken.validate()


def test_one_hot_chain_is_deterministic(cycle_matrix):
    dataset = sample_sequences(cycle_matrix, TriggerSpec(), n=10, length=8, seed=1)
    start = dataset.sequences[:, :1]
    assert np.array_equal(dataset.sequences, (start + np.arange(8)) % 5)


def test_sequences_do_not_depend_on_batch_size(mixed_matrix, triggers):
    small = sample_sequences(mixed_matrix, triggers, n=10, length=16, seed=11)
    large = sample_sequences(mixed_matrix, triggers, n=50, length=16, seed=11)
    assert np.array_equal(large.sequences[:10], small.sequences)
    assert large.subset(10).dataset_id == small.dataset_id
    assert sample_sequences(mixed_matrix, triggers, n=10, length=16, seed=12).dataset_id != small.dataset_id


def test_next_token_frequencies_match_row():
    q = np.random.default_rng(0).dirichlet(np.ones(8))
    matrix = TransitionMatrix.from_rows(np.tile(q, (8, 1)))
    n = 100_000
    dataset = sample_pairs(matrix, n, seed=5)
    freq = np.bincount(dataset.sequences[:, 1], minlength=8) / n
    stderr = np.sqrt(q * (1 - q) / n)
    assert np.all(np.abs(freq - q) <= 4 * stderr + 1e-12)


def test_boost_moves_mass_onto_triggers(mixed_matrix, triggers):
    boosted = boost_triggers(mixed_matrix, triggers, 0.2)
    mask = triggers.mask(16)
    assert np.allclose(boosted.rows.sum(axis=1), 1.0, atol=1e-12)
    assert np.array_equal(boosted.rows[mask], mixed_matrix.rows[mask])
    assert np.all(boosted.rows[~mask][:, mask].sum(axis=1) >= mixed_matrix.rows[~mask][:, mask].sum(axis=1) - 1e-12)
    assert boost_triggers(mixed_matrix, triggers, 0.0) is mixed_matrix


class TestRowCounts:
    def test_repeated_token(self):
        counts = empirical_row_counts(np.array([[3, 3, 3]]), k=4)
        assert counts.counts[3, 3] == 2
        assert counts.totals.tolist() == [0, 0, 0, 2]
        assert counts.counts.sum() == 2

    def test_two_sequences(self):
        counts = empirical_row_counts(np.array([[0, 1], [0, 2]]), k=3)
        assert counts.counts[0].tolist() == [0, 1, 1]
        assert counts.totals.tolist() == [2, 0, 0]

    def test_empty(self):
        with pytest.raises(InvariantViolation):
            empirical_row_counts(np.zeros((0, 4), dtype=np.int64), k=4)


def test_derive_seed_separates_namespaces():
    assert derive_seed("teacher", 0) == derive_seed("teacher", 0)
    assert derive_seed("teacher", 0) != derive_seed("student", 0)
    assert derive_seed("teacher", 0) != derive_seed("teacher", 1)


def test_persistence(tmp_path, mixed_matrix, triggers):
    dataset = sample_sequences(mixed_matrix, triggers, n=20, length=16, seed=3)
    save_matrix(mixed_matrix, tmp_path / "matrix.npz")
    assert load_matrix(tmp_path / "matrix.npz") == mixed_matrix

    save_dataset(dataset, tmp_path / "split.npz", mixed_matrix)
    loaded, source = load_dataset(tmp_path / "split.npz")
    assert loaded.dataset_id == dataset.dataset_id
    assert loaded.seed == 3
    assert source == mixed_matrix


@pytest.mark.slow
def test_empirical_rows_converge_with_sample_size(mixed_matrix):
    sizes = [100, 1_000, 10_000]
    errors = np.empty((5, len(sizes)))
    for seed in range(5):
        for j, n in enumerate(sizes):
            estimate = fit_scratch(empirical_row_counts(sample_pairs(mixed_matrix, n, seed=seed)))
            errors[seed, j] = np.abs(estimate.matrix.rows - mixed_matrix.rows).sum(axis=1).mean()
    median = np.median(errors, axis=0)
    assert np.all(np.diff(median) < 0), median
    assert median[-1] < median[0] / 3

import math

import numpy as np
import pytest

from distill_lab.core.errors import InvariantViolation
from distill_lab.sandbox.markov_gen import (
    RowCounts,
    SequenceDataset,
    TransitionMatrix,
    TriggerSpec,
    build_sparse_matrix,
    empirical_row_counts,
    sample_pairs,
)
from distill_lab.sandbox.tabular_bigram import (
    DISTILL,
    SCRATCH,
    coupon_exceedance,
    coupon_tail_threshold,
    coupon_trial,
    coupon_trials,
    distill_sample_requirement,
    expected_coupon_draws,
    fit_distill,
    fit_scratch,
    mle_l1_trials,
    run_complexity_sweep,
    scratch_sample_requirement,
    summarize_sweep,
)


def counts_of(matrix):
    matrix = np.asarray(matrix)
    return RowCounts(counts=matrix, totals=matrix.sum(axis=1))


def teacher_4():
    return TransitionMatrix.from_rows([
        [0.1, 0.2, 0.3, 0.4],
        [0.7, 0.1, 0.1, 0.1],
        [0.25, 0.25, 0.25, 0.25],
        [0.0, 0.0, 1.0, 0.0],
    ])


class TestScratch:
    def test_hand_counts(self):
        estimate = fit_scratch(counts_of([[0, 3, 1], [0, 0, 0], [2, 0, 0]]))
        assert estimate.matrix.rows[0].tolist() == [0.0, 0.75, 0.25]
        assert estimate.matrix.rows[2].tolist() == [1.0, 0.0, 0.0]
        assert np.allclose(estimate.matrix.rows[1], 1 / 3)
        assert estimate.unseen_rows == frozenset({1})

    def test_no_counts_is_all_fallback(self):
        estimate = fit_scratch(counts_of(np.zeros((4, 4), dtype=np.int64)))
        assert estimate.unseen_rows == frozenset(range(4))
        assert np.allclose(estimate.matrix.rows, 0.25)

    def test_error_shrinks_with_samples(self):
        teacher = build_sparse_matrix(8, 8, seed=3)
        medians = []
        for n in (100, 1000, 10000):
            worst = [
                np.abs(fit_scratch(empirical_row_counts(sample_pairs(teacher, n, [s, n]))).matrix.rows - teacher.rows)
                .sum(axis=1).max()
                for s in range(5)
            ]
            medians.append(float(np.median(worst)))
        assert medians[0] > medians[1] > medians[2]


class TestDistill:
    def test_full_coverage_reproduces_teacher(self):
        teacher = build_sparse_matrix(64, 64, seed=1)
        data = sample_pairs(teacher, 2000, seed=0)
        estimate = fit_distill(data, teacher)
        assert estimate.observed_rows == frozenset(range(64))
        assert np.array_equal(estimate.matrix.rows, teacher.rows)

    def test_partial_coverage(self):
        teacher = teacher_4()
        data = SequenceDataset(np.array([[0, 1], [1, 0]]), np.array([0, 0]), TriggerSpec(), 4, teacher.matrix_id, 0)
        estimate = fit_distill(data, teacher)
        assert np.array_equal(estimate.matrix.rows[:2], teacher.rows[:2])
        assert np.allclose(estimate.matrix.rows[2:], 0.25)
        assert estimate.observed_rows == frozenset({0, 1})

    def test_empty_dataset_is_all_fallback(self):
        teacher = teacher_4()
        data = SequenceDataset(np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=np.int64), TriggerSpec(), 4, "", 0)
        estimate = fit_distill(data, teacher)
        assert estimate.observed_rows == frozenset()
        assert np.allclose(estimate.matrix.rows, 0.25)

    def test_vocabulary_mismatch(self):
        with pytest.raises(InvariantViolation):
            fit_distill(counts_of(np.ones((3, 3), dtype=np.int64)), teacher_4())


class TestCoupon:
    def test_single_coupon(self):
        assert coupon_trial(1, 5, seed=9) == 5

    def test_expected_draws(self):
        assert expected_coupon_draws(64) == pytest.approx(303.6, abs=0.1)

    def test_trial_collects_every_coupon(self):
        draws = coupon_trial(10, 2, seed=4)
        assert draws >= 20
        assert np.array_equal(coupon_trials(10, 2, 3, seed=4), coupon_trials(10, 2, 3, seed=4))

    def test_mean_matches_harmonic_formula(self):
        draws = coupon_trials(64, 1, 2000, seed=1)
        assert draws.mean() == pytest.approx(expected_coupon_draws(64), rel=0.05)

    @pytest.mark.slow
    @pytest.mark.parametrize("delta", [0.1, 0.01])
    def test_tail_threshold_holds(self, delta):
        check = coupon_exceedance(64, delta, trials=10_000, seed=0)
        assert check.threshold == pytest.approx(coupon_tail_threshold(64, delta))
        assert check.holds, f"{check.exceedances} exceedances, {check.allowed} allowed"

    def test_requirements_order(self):
        assert scratch_sample_requirement(64, 64, 0.2, 0.1) > distill_sample_requirement(64, 0.1)
        assert distill_sample_requirement(64, 0.1) == pytest.approx(64 * math.log(64) + 64 * math.log(10))


@pytest.mark.parametrize("p", [2, 8])
@pytest.mark.parametrize("n_i", [16, 64, 256])
def test_mle_l1_within_root_p_over_n(p, n_i):
    row = build_sparse_matrix(8, p, seed=5).rows[0]
    result = mle_l1_trials(row, n_i, trials=20, seed=p * 1000 + n_i)
    assert result.support == p
    assert result.mean - 2 * result.stderr <= result.bound


@pytest.mark.slow
def test_mle_rows_are_unbiased():
    teacher = teacher_4()
    trials, n_i = 10_000, 50
    rng = np.random.default_rng(17)
    draws = rng.multinomial(n_i, teacher.rows, size=(trials, teacher.k))
    estimates = np.stack([fit_scratch(counts_of(c)).matrix.rows for c in draws])
    assert np.allclose(estimates.sum(axis=-1), 1.0)
    mean = estimates.mean(axis=0)
    stderr = estimates.std(axis=0, ddof=1) / math.sqrt(trials)
    assert np.all(np.abs(mean - teacher.rows) <= 3 * stderr + 1e-15)


class TestSweep:
    def test_vacuous_accuracy_succeeds_immediately(self):
        trials = run_complexity_sweep(8, 8, 1.0, 0.1, [4000, 1000], trials=5, seed=0)
        summary = summarize_sweep(trials)
        assert summary.crossover == {DISTILL: 1000, SCRATCH: 1000}
        assert [p.n_samples for p in summary.points[:2]] == [1000, 1000]

    def test_distillation_needs_fewer_samples_on_dense_rows(self):
        summary = summarize_sweep(run_complexity_sweep(16, 16, 0.2, 0.1, [64, 256, 1024, 4096], trials=10, seed=0))
        distill, scratch = summary.crossover[DISTILL], summary.crossover[SCRATCH]
        assert distill is not None
        assert scratch is None or scratch > distill

    def test_one_hot_rows_make_estimators_identical(self):
        trials = run_complexity_sweep(16, 1, 0.2, 0.1, [32, 256], trials=4, seed=2)
        by_key = {(t.samples_used, t.trial, t.estimator): t for t in trials}
        for (n, t, name), trial in by_key.items():
            if name == SCRATCH:
                assert np.array_equal(trial.achieved_error, by_key[(n, t, DISTILL)].achieved_error)

    def test_records(self):
        trial = run_complexity_sweep(8, 2, 0.5, 0.1, [64], trials=1, seed=0)[0]
        record = trial.to_record()
        assert set(record) == {"k", "p", "epsilon", "n_samples", "estimator", "trial", "mean_L1", "success"}
        assert record["n_samples"] == 64

    def test_invalid_inputs(self):
        with pytest.raises(InvariantViolation):
            run_complexity_sweep(8, 2, 0.5, 0.1, [], trials=1)
        with pytest.raises(InvariantViolation):
            run_complexity_sweep(8, 2, 0.0, 0.1, [64], trials=1)
        with pytest.raises(InvariantViolation):
            summarize_sweep([])

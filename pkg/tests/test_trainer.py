import math
from dataclasses import replace

import numpy as np
import pytest

from distill_lab.core.errors import InvariantViolation, TrainingDivergedError
from distill_lab.sandbox.distill_loss import (
    LabelOrigin,
    LossSpec,
    SoftLabelField,
    SparsityMode,
    sparsify_labels,
    teacher_soft_labels,
)
from distill_lab.sandbox.eval_suite import TransformerPredictor, build_eval_set, held_out_cross_entropy
from distill_lab.sandbox.markov_gen import TriggerSpec, derive_seed, sample_sequences
from distill_lab.sandbox.trainer import TrainConfig, snapshot_steps, train
from distill_lab.sandbox.transformer import ModelConfig, init_params

MODEL = ModelConfig(vocab_size=5, d_model=8, n_layers=1, n_heads=2, max_len=8)
FAST = TrainConfig(epochs=2, batch_size=16, lr=1e-2, warmup_fraction=0.0, checkpoints=2, log_every=0)
CE = LossSpec(alpha=0.0)


@pytest.fixture
def dataset(cycle_matrix):
    return sample_sequences(cycle_matrix, TriggerSpec(), n=40, length=8, seed=0)


def test_snapshot_steps():
    assert snapshot_steps(10, 3) == [3, 7, 10]
    assert snapshot_steps(5, 0) == []
    assert snapshot_steps(2, 5) == [1, 2]


def test_training_is_deterministic(dataset):
    a = train(MODEL, dataset, CE, FAST, seed=3)
    b = train(MODEL, dataset, CE, FAST, seed=3)
    assert np.array_equal(a.loss_trace, b.loss_trace)
    assert a.params.checkpoint_id == b.params.checkpoint_id
    assert not np.array_equal(train(MODEL, dataset, CE, FAST, seed=4).loss_trace, a.loss_trace)


def test_steps_and_snapshots(dataset):
    result = train(MODEL, dataset, CE, FAST, seed=0)
    assert result.steps == 6
    assert len(result.loss_trace) == 6
    assert [s.step for s in result.snapshots] == [3, 6]
    assert [s.samples_seen for s in result.snapshots] == [40, 80]
    assert result.snapshots[-1].params.checkpoint_id == result.params.checkpoint_id


def test_loss_goes_down_on_a_deterministic_chain(dataset):
    result = train(MODEL, dataset, CE, TrainConfig(epochs=10, batch_size=16, lr=1e-2, log_every=0), seed=0)
    assert result.final_loss < result.loss_trace[0]


def test_top1_distillation_equals_training_on_teacher_argmax(dataset):
    teacher = init_params(ModelConfig(vocab_size=5, d_model=8, n_layers=1, n_heads=2, max_len=8, seed=9, init_std=0.5))
    labels = sparsify_labels(teacher_soft_labels(teacher, dataset.sequences, 1.0), SparsityMode.TOP_K, 1)
    targets = labels.probs[:, :-1].argmax(axis=-1)

    distilled = train(
        MODEL, dataset, LossSpec(alpha=1.0, temperature=1.0, sparsity_mode="top-k-deterministic", sparsity_k=1),
        FAST, seed=1, labels=labels,
    )
    swapped = train(MODEL, dataset, CE, FAST, seed=1, target_override=targets)
    assert np.allclose(distilled.loss_trace, swapped.loss_trace, rtol=0, atol=1e-12)


def test_input_errors(dataset):
    with pytest.raises(InvariantViolation):
        train(MODEL, dataset, LossSpec(alpha=0.5), FAST, seed=0)
    with pytest.raises(InvariantViolation):
        train(MODEL, np.zeros((0, 8), dtype=np.int64), CE, FAST, seed=0)
    with pytest.raises(InvariantViolation):
        TrainConfig(epochs=0)


def test_nan_loss_stops_training(dataset):
    probs = np.full((40, 8, 5), np.nan)
    labels = SoftLabelField(probs, np.full((40, 8), np.nan), LabelOrigin("broken", 1.0))
    with pytest.raises(TrainingDivergedError) as excinfo:
        train(MODEL, dataset, LossSpec(alpha=1.0), FAST, seed=0, labels=labels)
    assert excinfo.value.step == 1


@pytest.mark.slow
def test_teacher_held_out_cross_entropy_falls_across_snapshots(mixed_matrix, triggers):
    model = ModelConfig(vocab_size=16, d_model=16, n_layers=1, n_heads=2, max_len=16)
    config = TrainConfig(epochs=4, batch_size=32, lr=1e-2, warmup_fraction=0.0, checkpoints=3, log_every=0)
    train_set = sample_sequences(mixed_matrix, triggers, n=300, length=16, seed=1)
    eval_set = build_eval_set(mixed_matrix, triggers, seed=0, n=200, length=16)

    curves = []
    for seed in range(3):
        result = train(model, train_set, CE, config, seed=seed)
        initial = init_params(replace(model, seed=derive_seed("init", seed)))
        checkpoints = [initial] + [s.params for s in result.snapshots]
        curves.append([held_out_cross_entropy(TransformerPredictor(p), eval_set) for p in checkpoints])

    curves = np.array(curves)
    assert curves.shape == (3, 4)
    assert np.all(np.abs(curves[:, 0] - math.log(16)) < 0.5)
    assert np.all(np.median(np.diff(curves, axis=1), axis=0) < 0)

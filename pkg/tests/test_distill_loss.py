import itertools
import math

import numpy as np
import pytest
from scipy.special import log_softmax, softmax

from distill_lab.core.errors import InvariantViolation
from distill_lab.sandbox.distill_loss import (
    LabelOrigin,
    LossSpec,
    SoftLabelCache,
    SoftLabelField,
    SparsityMode,
    cross_entropy,
    distill_loss,
    make_objective,
    route_tokens,
    routing_mask,
    sparsify_labels,
    teacher_soft_labels,
)
from distill_lab.sandbox.transformer import ModelConfig, init_params

from .conftest import check_gradients

ORIGIN = LabelOrigin("teacher-test", 2.0)


def random_labels(shape, seed=0, scale=2.0):
    logits = np.random.default_rng(seed).normal(0.0, scale, size=shape)
    return SoftLabelField.from_probs(softmax(logits, axis=-1), ORIGIN)


@pytest.fixture
def batch():
    rng = np.random.default_rng(3)
    tokens = rng.integers(0, 5, size=(3, 8))
    logits = rng.normal(size=(3, 8, 5))
    return tokens, logits, random_labels((3, 8, 5), seed=4)


def test_uniform_logits_give_log_k():
    result = cross_entropy(np.zeros((6, 5)), np.arange(6) % 5)
    assert result.loss == pytest.approx(math.log(5))
    assert not result.dlogits[-1].any()


def test_alpha_zero_is_cross_entropy(batch):
    tokens, logits, labels = batch
    plain = cross_entropy(logits, tokens)
    mixed = distill_loss(logits, tokens, labels, LossSpec(alpha=0.0, temperature=3.0))
    assert mixed.loss == plain.loss
    assert np.array_equal(mixed.dlogits, plain.dlogits)


def test_loss_mixes_hard_and_soft_terms(batch):
    tokens, logits, labels = batch
    result = distill_loss(logits, tokens, labels, LossSpec(alpha=0.3))
    log_p = log_softmax(logits[:, :-1], axis=-1)
    hard = -np.take_along_axis(log_p, tokens[:, 1:, None], axis=-1)[..., 0]
    soft = -(labels.probs[:, :-1] * log_p).sum(axis=-1)
    assert np.max(np.abs(result.hard - hard)) < 1e-10
    assert np.max(np.abs(result.soft - soft)) < 1e-10
    assert abs(result.loss - np.mean(0.7 * hard + 0.3 * soft)) < 1e-10
    assert result.soft.shape == (3, 7)


def test_routed_positions_drop_the_soft_term(batch):
    tokens, logits, labels = batch
    spec = LossSpec(alpha=0.5, routing_fraction=0.5)
    result = distill_loss(logits, tokens, labels, spec)
    assert result.routed.sum(axis=-1).tolist() == [3, 3, 3]
    routed = result.routed
    assert np.array_equal(result.per_position[routed], 0.5 * result.hard[routed])

    plain = cross_entropy(logits, tokens).dlogits[:, :-1]
    assert np.allclose(result.dlogits[:, :-1][routed], 0.5 * plain[routed], rtol=0, atol=1e-14)


def test_rescaled_routing_keeps_full_hard_weight(batch):
    tokens, logits, labels = batch
    result = distill_loss(logits, tokens, labels, LossSpec(alpha=0.5, routing_fraction=0.5, rescale_routed=True))
    assert np.allclose(result.per_position[result.routed], result.hard[result.routed])


def test_routing_mask_matches_sort():
    entropy = np.random.default_rng(5).random((4, 20))
    mask = routing_mask(entropy, 0.15)
    for row, chosen in zip(entropy, mask):
        assert set(np.flatnonzero(chosen)) == set(np.argsort(row)[:3])


def test_routing_ties_prefer_lower_positions():
    assert routing_mask(np.array([0.2, 0.1, 0.1, 0.1]), 0.5).tolist() == [False, True, True, False]
    assert not routing_mask(np.array([0.2, 0.1]), 0.0).any()
    with pytest.raises(InvariantViolation):
        routing_mask(np.zeros(3), 1.5)


def test_route_tokens_single_sequence():
    labels = SoftLabelField.from_probs(np.array([[0.5, 0.5], [1.0, 0.0], [0.9, 0.1], [0.5, 0.5]]), ORIGIN)
    assert route_tokens(labels, 1 / 3) == {1}
    with pytest.raises(InvariantViolation):
        route_tokens(random_labels((2, 4, 3)), 0.5)


def test_all_equals_dense(batch):
    tokens, logits, labels = batch
    dense = distill_loss(logits, tokens, labels, LossSpec(alpha=0.5))
    kept = sparsify_labels(labels, SparsityMode.TOP_K, "all")
    assert kept is labels
    all_top = distill_loss(logits, tokens, kept, LossSpec(alpha=0.5, sparsity_mode="top-k-deterministic"))
    assert dense.loss == all_top.loss
    assert np.array_equal(dense.dlogits, all_top.dlogits)


def test_top1_labels_are_teacher_argmax(batch):
    tokens, logits, labels = batch
    top1 = sparsify_labels(labels, SparsityMode.TOP_K, 1)
    top1.validate()
    argmax = labels.probs.argmax(axis=-1)
    assert np.array_equal(top1.probs.argmax(axis=-1), argmax)
    assert np.all(top1.probs.max(axis=-1) == 1.0)
    assert np.all(top1.entropy == 0.0)

    soft = distill_loss(logits, tokens, top1, LossSpec(alpha=1.0, sparsity_mode="top-k-deterministic", sparsity_k=1))
    hard = distill_loss(logits, tokens, None, LossSpec(alpha=0.0), targets=argmax[:, :-1])
    assert soft.loss == pytest.approx(hard.loss, abs=1e-12)
    assert np.allclose(soft.dlogits, hard.dlogits, rtol=0, atol=1e-15)


def test_top_k_keeps_largest_probabilities():
    labels = SoftLabelField.from_probs(np.array([[0.1, 0.4, 0.2, 0.3]]), ORIGIN)
    top2 = sparsify_labels(labels, "top-k-deterministic", 2)
    assert np.allclose(top2.probs, [[0.0, 4 / 7, 0.0, 3 / 7]])
    assert top2.support_k == 2
    assert top2.origin.sparsity == "top-k-deterministic:2"


def test_sample_k_inclusion_frequencies():
    probs = np.array([0.5, 0.3, 0.2])
    n = 100_000
    labels = SoftLabelField.from_probs(np.tile(probs, (n, 1)), ORIGIN)
    sampled = sparsify_labels(labels, SparsityMode.SAMPLE_K, 2, seed=11)
    sampled.validate()
    frequency = (sampled.probs > 0).mean(axis=0)

    inclusion = np.zeros(3)
    for first, second in itertools.permutations(range(3), 2):
        chance = probs[first] * probs[second] / (1.0 - probs[first])
        inclusion[[first, second]] += chance
    assert inclusion.sum() == pytest.approx(2.0)
    stderr = np.sqrt(inclusion * (1.0 - inclusion) / n)
    assert np.all(np.abs(frequency - inclusion) <= 3 * stderr)


def test_sample_k_is_seeded(batch):
    _, _, labels = batch
    a = sparsify_labels(labels, SparsityMode.SAMPLE_K, 2, seed=1)
    b = sparsify_labels(labels, SparsityMode.SAMPLE_K, 2, seed=1)
    assert np.array_equal(a.probs, b.probs)
    assert np.all(np.count_nonzero(a.probs, axis=-1) == 2)


def test_invalid_specs(batch):
    tokens, logits, _ = batch
    with pytest.raises(InvariantViolation):
        LossSpec(alpha=1.5)
    with pytest.raises(InvariantViolation):
        LossSpec(sparsity_k=0)
    with pytest.raises(InvariantViolation):
        distill_loss(logits, tokens, None, LossSpec(alpha=0.5))
    with pytest.raises(InvariantViolation):
        distill_loss(logits, tokens, None, LossSpec(alpha=0.0, sparsity_k=9))


def test_teacher_labels(tmp_path):
    teacher = init_params(ModelConfig(vocab_size=5, d_model=8, n_layers=1, n_heads=2, max_len=8, init_std=0.5))
    seqs = np.random.default_rng(0).integers(0, 5, size=(5, 8))
    labels = teacher_soft_labels(teacher, seqs, temperature=2.0, batch_size=2)
    labels.validate()
    assert labels.probs.shape == (5, 8, 5)
    assert labels.origin == LabelOrigin(teacher.checkpoint_id, 2.0)
    assert np.allclose(teacher_soft_labels(teacher, seqs[0], 2.0).probs, labels.probs[0], atol=1e-12)
    cooler = teacher_soft_labels(teacher, seqs, temperature=0.5)
    assert cooler.entropy.mean() < labels.entropy.mean()


def test_label_entropy_rises_with_temperature_at_every_position():
    teacher = init_params(ModelConfig(vocab_size=5, d_model=8, n_layers=1, n_heads=2, max_len=8, init_std=0.5))
    seqs = np.random.default_rng(1).integers(0, 5, size=(6, 8))
    entropy = np.stack([teacher_soft_labels(teacher, seqs, t).entropy for t in (0.5, 1.0, 2.0, 3.0)])
    assert np.all(np.diff(entropy, axis=0) > 0)
    assert np.all(entropy < math.log(5))


@pytest.mark.parametrize("sparse", [False, True])
def test_label_cache_persistence(tmp_path, sparse):
    labels = random_labels((4, 6, 5), seed=2)
    if sparse:
        labels = sparsify_labels(labels, SparsityMode.TOP_K, 2)
    SoftLabelCache(labels, "dataset-1").save(tmp_path / "labels.npz")
    loaded = SoftLabelCache.load(tmp_path / "labels.npz")
    assert loaded.dataset_id == "dataset-1"
    assert loaded.labels.support_k == labels.support_k
    assert loaded.labels.origin == labels.origin
    assert np.array_equal(loaded.labels.probs, labels.probs)
    loaded.labels.validate()


GRID = [
    LossSpec(alpha=alpha, temperature=2.0, routing_fraction=routing)
    for alpha in (0.0, 0.5, 1.0)
    for routing in (0.0, 0.15, 1.0)
]
SPARSITY = [("top-k-deterministic", 1), ("sample-k", 2)]


@pytest.mark.slow
@pytest.mark.parametrize("spec", GRID, ids=lambda s: f"a{s.alpha}-x{s.routing_fraction}")
def test_gradients_dense_grid_every_entry(spec):
    params = init_params(ModelConfig(vocab_size=5, d_model=8, n_layers=1, n_heads=2, max_len=6, init_std=0.3))
    tokens = np.random.default_rng(6).integers(0, 5, size=(2, 6))
    labels = random_labels((2, 6, 5), seed=7)
    check_gradients(params, tokens, make_objective(tokens, labels, spec))


@pytest.mark.parametrize("mode, k", SPARSITY)
@pytest.mark.parametrize("spec", GRID, ids=lambda s: f"a{s.alpha}-x{s.routing_fraction}")
def test_gradients_sparse_labels(spec, mode, k):
    params = init_params(ModelConfig(vocab_size=5, d_model=8, n_layers=1, n_heads=2, max_len=8, init_std=0.3))
    tokens = np.random.default_rng(6).integers(0, 5, size=(2, 8))
    labels = sparsify_labels(random_labels((2, 8, 5), seed=7), mode, k, seed=8)
    check_gradients(params, tokens, make_objective(tokens, labels, spec), samples=2)


def test_gradients_classical_mode():
    params = init_params(ModelConfig(vocab_size=5, d_model=8, n_layers=1, n_heads=2, max_len=8, init_std=0.3))
    tokens = np.random.default_rng(6).integers(0, 5, size=(2, 8))
    labels = random_labels((2, 8, 5), seed=7)
    spec = LossSpec(alpha=0.5, temperature=2.0, classical=True, routing_fraction=0.15)
    check_gradients(params, tokens, make_objective(tokens, labels, spec), samples=2)


def peaked_at_seven():
    probs = np.full((10, 5), 0.2)
    probs[7] = [0.96, 0.01, 0.01, 0.01, 0.01]
    return SoftLabelField.from_probs(probs, ORIGIN)


def test_routing_survives_top1_sparsification():
    dense = peaked_at_seven()
    assert route_tokens(dense, 0.15) == {7}

    top1 = sparsify_labels(dense, "top-k-deterministic", 1)
    assert np.all(top1.entropy == 0.0)
    assert np.array_equal(top1.rank_entropy, dense.entropy)
    assert route_tokens(top1, 0.15) == {7}

    tokens = np.zeros(10, dtype=int)
    logits = np.random.default_rng(0).normal(size=(10, 5))
    spec = LossSpec(alpha=0.5, routing_fraction=0.15, sparsity_mode="top-k-deterministic", sparsity_k=1)
    result = distill_loss(logits, tokens, top1, spec)
    assert np.flatnonzero(result.routed).tolist() == [7]


def test_sampled_labels_route_on_dense_entropy():
    dense = peaked_at_seven()
    sampled = sparsify_labels(dense, SparsityMode.SAMPLE_K, 2, seed=3)
    assert route_tokens(sampled, 0.15) == {7}
    assert np.array_equal(sampled[2:5].rank_entropy, dense.entropy[2:5])


def test_label_cache_keeps_routing_entropy(tmp_path):
    dense = random_labels((3, 6, 5), seed=9)
    top1 = sparsify_labels(dense, SparsityMode.TOP_K, 1)
    SoftLabelCache(top1, "dataset-2").save(tmp_path / "labels.npz")
    loaded = SoftLabelCache.load(tmp_path / "labels.npz").labels
    assert np.array_equal(loaded.rank_entropy, dense.entropy)
    spec = LossSpec(alpha=1.0, routing_fraction=0.5, sparsity_mode="top-k-deterministic", sparsity_k=1)
    logits = np.random.default_rng(1).normal(size=(3, 6, 5))
    tokens = np.zeros((3, 6), dtype=int)
    assert np.array_equal(distill_loss(logits, tokens, loaded, spec).routed, distill_loss(logits, tokens, top1, spec).routed)


def test_sample_k_support_counts_nonzero_tokens():
    probs = np.array([[0.7, 0.3, 0.0, 0.0], [0.0, 0.0, 0.4, 0.6]])
    labels = SoftLabelField.from_probs(probs, ORIGIN)
    sampled = sparsify_labels(labels, SparsityMode.SAMPLE_K, 3, seed=0)
    assert sampled.support_k == 2
    assert np.allclose(sampled.probs, probs)
    sampled.validate()

"""
Evaluation Suite

Induction (trigger → copy) accuracy and per-entropy-class KL divergence
between true transition rows and a model's learned next-token behaviour,
measured on a fixed held-out set.

Models are reached through the Predictor protocol: anything with
`vocab_size` and `log_probs(sequences) -> (B, T, k)`.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Protocol

import numpy as np

from ..core.errors import EvaluationError
from .markov_gen import (
    EntropyClass,
    SequenceDataset,
    TransitionMatrix,
    TriggerSpec,
    derive_seed,
    hash_rows,
    sample_sequences,
)
from .transformer import ModelParams, predict_log_probs

logger = logging.getLogger(__name__)

EVAL_CHUNK = 512


class Predictor(Protocol):
    vocab_size: int

    def log_probs(self, sequences: np.ndarray) -> np.ndarray:
        ...


class TransformerPredictor:
    """Predictor backed by micro-transformer parameters"""

    def __init__(self, params: ModelParams, batch_size: int = 256):
        self.params = params
        self.batch_size = batch_size
        self.vocab_size = params.config.vocab_size

    def log_probs(self, sequences: np.ndarray) -> np.ndarray:
        return predict_log_probs(self.params, sequences, self.batch_size)


class MatrixPredictor:
    """Bigram lookup: the next-token distribution is the current token's row"""

    def __init__(self, matrix: TransitionMatrix):
        self.matrix = matrix
        self.vocab_size = matrix.k
        with np.errstate(divide="ignore"):
            self._log_rows = np.log(matrix.rows)

    def log_probs(self, sequences: np.ndarray) -> np.ndarray:
        return self._log_rows[np.asarray(sequences)]


class UniformPredictor:
    """Uniform next-token distribution everywhere"""

    def __init__(self, vocab_size: int):
        self.vocab_size = vocab_size

    def log_probs(self, sequences: np.ndarray) -> np.ndarray:
        sequences = np.asarray(sequences)
        return np.full(sequences.shape + (self.vocab_size,), -math.log(self.vocab_size))


def _chunks(dataset: SequenceDataset):
    for start in range(0, dataset.n, EVAL_CHUNK):
        yield start, dataset.sequences[start:start + EVAL_CHUNK]


def build_eval_set(
    matrix: TransitionMatrix,
    triggers: TriggerSpec,
    seed: int,
    n: int = 4000,
    length: int = 64,
    per_trigger_targets: bool = False,
) -> SequenceDataset:
    """Held-out sequences drawn from the `eval` seed namespace"""
    return sample_sequences(matrix, triggers, n, length, derive_seed("eval", seed), per_trigger_targets)


def check_disjoint(train: SequenceDataset, held_out: SequenceDataset) -> int:
    """Fail loudly if any held-out sequence also appears in the training set"""
    overlap = hash_rows(train.sequences) & hash_rows(held_out.sequences)
    if overlap:
        raise EvaluationError(f"{len(overlap)} held-out sequences also occur in the training set")
    return 0


@dataclass
class InductionResult:
    """Trigger → copy accuracy with exact counts"""
    correct: int
    total: int
    excluded: int
    unfiltered_correct: int
    unfiltered_total: int

    @property
    def accuracy(self) -> Optional[float]:
        return self.correct / self.total if self.total else None

    @property
    def unfiltered_accuracy(self) -> Optional[float]:
        return self.unfiltered_correct / self.unfiltered_total if self.unfiltered_total else None


def trigger_positions(dataset: SequenceDataset):
    """
    Boolean masks over positions 0..L−2: trigger occurrences and the subset
    that are first occurrences, plus each position's copy target.

    With a shared copy target the first occurrence of any trigger reveals it;
    with per-trigger targets each trigger's own first occurrence is excluded.
    """
    current = dataset.sequences[:, :-1]
    k = dataset.k
    slot = np.full(k, -1)
    slot[list(dataset.triggers.tokens)] = np.arange(dataset.triggers.count)
    is_trigger = slot[current] >= 0

    if dataset.per_trigger:
        first = np.zeros_like(is_trigger)
        for token in dataset.triggers.tokens:
            occ = current == token
            first |= occ & (np.cumsum(occ, axis=1) == 1)
    else:
        first = is_trigger & (np.cumsum(is_trigger, axis=1) == 1)

    table = dataset.target_table()
    rows = np.arange(dataset.n)[:, None]
    targets = np.where(is_trigger, table[rows, np.maximum(slot[current], 0)], -1)
    return is_trigger, first, targets


def induction_accuracy(model: Predictor, eval_set: SequenceDataset) -> InductionResult:
    """Argmax accuracy on the copy target at repeat trigger occurrences"""
    is_trigger, first, targets = trigger_positions(eval_set)
    eligible = is_trigger & ~first

    correct = unfiltered_correct = 0
    for start, chunk in _chunks(eval_set):
        pred = model.log_probs(chunk)[:, :-1, :].argmax(axis=-1)
        sl = slice(start, start + chunk.shape[0])
        hit = pred == targets[sl]
        correct += int(np.count_nonzero(hit & eligible[sl]))
        unfiltered_correct += int(np.count_nonzero(hit & is_trigger[sl]))

    result = InductionResult(
        correct=correct,
        total=int(eligible.sum()),
        excluded=int(first.sum()),
        unfiltered_correct=unfiltered_correct,
        unfiltered_total=int(is_trigger.sum()),
    )
    if result.total == 0:
        logger.warning("No eligible trigger positions in the eval set; induction accuracy undefined")
    return result


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p ‖ q) in nats over p's support; +inf when q vanishes there"""
    support = p > 0
    if np.any(q[support] <= 0):
        return math.inf
    return math.fsum(p[support] * (np.log(p[support]) - np.log(q[support])))


@dataclass
class RowKLResult:
    """Per-row KL and class means"""
    per_row: Dict[int, float]
    by_class: Dict[str, Optional[float]]
    positions: Dict[int, int]


def row_kl(model: Predictor, matrix: TransitionMatrix, eval_set: SequenceDataset) -> RowKLResult:
    """
    KL(π_i ‖ q_i) for every non-trigger row i, where q_i averages the model's
    next-token distributions over all eval positions whose current token is i.
    """
    k = matrix.k
    if eval_set.k != k:
        raise EvaluationError(f"Eval set k={eval_set.k} does not match matrix k={k}")
    trigger_mask = eval_set.triggers.mask(k)

    sums = np.zeros((k, k))
    counts = np.zeros(k, dtype=np.int64)
    for _, chunk in _chunks(eval_set):
        probs = np.exp(model.log_probs(chunk)).reshape(-1, k)
        current = chunk.reshape(-1)
        np.add.at(sums, current, probs)
        counts += np.bincount(current, minlength=k)

    missing = [i for i in range(k) if not trigger_mask[i] and counts[i] == 0]
    if missing:
        raise EvaluationError(f"Probe contexts do not cover rows {missing}")

    per_row: Dict[int, float] = {}
    for i in range(k):
        if trigger_mask[i]:
            continue
        per_row[i] = kl_divergence(matrix.rows[i], sums[i] / counts[i])

    by_class: Dict[str, Optional[float]] = {}
    for cls in EntropyClass:
        values = [per_row[i] for i in matrix.rows_in_class(cls) if i in per_row]
        by_class[cls.value] = math.fsum(values) / len(values) if values else None

    return RowKLResult(per_row=per_row, by_class=by_class, positions={i: int(c) for i, c in enumerate(counts)})


@dataclass
class EvalReport:
    """Evaluation of one checkpoint on one held-out set"""
    checkpoint_id: str
    eval_set_id: str
    induction: InductionResult
    kl_by_class: Dict[str, Optional[float]]
    kl_per_row: Dict[int, float] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def induction_accuracy(self) -> Optional[float]:
        return self.induction.accuracy

    def to_dict(self) -> Dict[str, Any]:
        return {
            "checkpoint_id": self.checkpoint_id,
            "eval_set_id": self.eval_set_id,
            "induction": asdict(self.induction),
            "induction_accuracy": self.induction.accuracy,
            "unfiltered_induction_accuracy": self.induction.unfiltered_accuracy,
            "kl_by_class": dict(self.kl_by_class),
            "kl_per_row": {str(i): v for i, v in self.kl_per_row.items()},
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EvalReport":
        return cls(
            checkpoint_id=data["checkpoint_id"],
            eval_set_id=data["eval_set_id"],
            induction=InductionResult(**data["induction"]),
            kl_by_class=dict(data["kl_by_class"]),
            kl_per_row={int(i): float(v) for i, v in data.get("kl_per_row", {}).items()},
            metadata=dict(data.get("metadata", {})),
        )


def evaluate(
    model: Predictor,
    matrix: TransitionMatrix,
    eval_set: SequenceDataset,
    checkpoint_id: str,
    metadata: Optional[Dict[str, Any]] = None,
) -> EvalReport:
    """Run both metrics and bundle them into a report"""
    induction = induction_accuracy(model, eval_set)
    kl = row_kl(model, matrix, eval_set)
    return EvalReport(
        checkpoint_id=checkpoint_id,
        eval_set_id=eval_set.dataset_id,
        induction=induction,
        kl_by_class=kl.by_class,
        kl_per_row=kl.per_row,
        metadata=dict(metadata or {}),
    )


def held_out_cross_entropy(model: Predictor, eval_set: SequenceDataset) -> float:
    """Mean next-token cross-entropy over every supervised eval position"""
    total: List[float] = []
    for _, chunk in _chunks(eval_set):
        lp = model.log_probs(chunk)[:, :-1, :]
        nxt = chunk[:, 1:]
        total.append(float(-np.take_along_axis(lp, nxt[..., None], axis=-1).sum()))
    return math.fsum(total) / (eval_set.n * (eval_set.length - 1))

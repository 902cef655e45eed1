"""
Distillation Objectives

Hard-label cross-entropy, the weighted hard/soft pretraining-distillation
loss with a tempered teacher, per-sequence entropy routing and top-k sparse
soft labels. Every loss returns its gradient with respect to the student
logits so it can drive transformer.backward.

Shapes: logits (..., T, k), tokens (..., T). Position j predicts token j+1,
so the T − 1 supervised positions are 0..T−2.
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Optional, Set, Union

import numpy as np
from scipy.special import entr, log_softmax, softmax

from ..core.errors import InvariantViolation
from .archive import read_archive, write_archive
from .transformer import LossFn, ModelParams, forward

logger = logging.getLogger(__name__)

NORMALIZATION_TOLERANCE = 1e-9

ALL = "all"


class SparsityMode(str, Enum):
    """How soft labels are sparsified"""
    DENSE = "dense"
    TOP_K = "top-k-deterministic"
    SAMPLE_K = "sample-k"


@dataclass(frozen=True)
class LossSpec:
    """Weights and label treatment of the distillation objective"""
    alpha: float = 0.5
    temperature: float = 2.0
    routing_fraction: float = 0.0
    sparsity_mode: SparsityMode = SparsityMode.DENSE
    sparsity_k: Union[int, str] = ALL
    classical: bool = False
    rescale_routed: bool = False

    def __post_init__(self):
        object.__setattr__(self, "sparsity_mode", SparsityMode(self.sparsity_mode))
        errors = []
        if not 0.0 <= self.alpha <= 1.0:
            errors.append(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.temperature > 0:
            errors.append(f"temperature must be > 0, got {self.temperature}")
        if not 0.0 <= self.routing_fraction <= 1.0:
            errors.append(f"routing_fraction must lie in [0, 1], got {self.routing_fraction}")
        if self.sparsity_k != ALL and (not isinstance(self.sparsity_k, int) or self.sparsity_k < 1):
            errors.append(f"sparsity_k must be a positive integer or '{ALL}', got {self.sparsity_k!r}")
        if errors:
            raise InvariantViolation("; ".join(errors))

    @property
    def uses_teacher(self) -> bool:
        return self.alpha > 0.0

    def validate_vocab(self, k: int) -> None:
        if self.sparsity_k != ALL and self.sparsity_k > k:
            raise InvariantViolation(f"sparsity_k={self.sparsity_k} exceeds vocabulary size {k}")


@dataclass(frozen=True)
class LabelOrigin:
    """Where a soft-label field came from"""
    checkpoint_id: str
    temperature: float
    sparsity: str = SparsityMode.DENSE.value


def label_entropy(probs: np.ndarray) -> np.ndarray:
    """Shannon entropy in nats along the last axis"""
    return entr(probs).sum(axis=-1)


@dataclass(frozen=True, eq=False)
class SoftLabelField:
    """Per-position teacher distributions with their entropies"""
    probs: np.ndarray
    entropy: np.ndarray
    origin: LabelOrigin
    support_k: Optional[int] = None
    # entropy of the dense teacher labels; routing ranks on this after sparsification
    routing_entropy: Optional[np.ndarray] = None

    @classmethod
    def from_probs(
        cls,
        probs: np.ndarray,
        origin: LabelOrigin,
        support_k: Optional[int] = None,
        routing_entropy: Optional[np.ndarray] = None,
    ) -> "SoftLabelField":
        probs = np.asarray(probs, dtype=np.float64)
        return cls(probs=probs, entropy=label_entropy(probs), origin=origin, support_k=support_k, routing_entropy=routing_entropy)

    @property
    def vocab_size(self) -> int:
        return self.probs.shape[-1]

    @property
    def rank_entropy(self) -> np.ndarray:
        """Entropy used to rank positions for routing"""
        return self.entropy if self.routing_entropy is None else self.routing_entropy

    @property
    def is_sparse(self) -> bool:
        return self.support_k is not None

    def validate(self) -> None:
        sums = self.probs.sum(axis=-1)
        if np.any(np.abs(sums - 1.0) > NORMALIZATION_TOLERANCE):
            raise InvariantViolation("Soft labels must sum to 1 at every position")
        if self.is_sparse and np.any(np.count_nonzero(self.probs, axis=-1) > self.support_k):
            raise InvariantViolation(f"Sparse labels exceed {self.support_k} nonzeros at some position")
        if np.any(np.abs(label_entropy(self.probs) - self.entropy) > NORMALIZATION_TOLERANCE):
            raise InvariantViolation("Stored label entropy disagrees with the distributions")

    def __getitem__(self, index) -> "SoftLabelField":
        routing = None if self.routing_entropy is None else self.routing_entropy[index]
        return SoftLabelField(self.probs[index], self.entropy[index], self.origin, self.support_k, routing)


def teacher_soft_labels(teacher: ModelParams, tokens, temperature: float, batch_size: int = 256) -> SoftLabelField:
    """σ(h_teacher(x_≤j) / T) at every position j"""
    if not temperature > 0:
        raise InvariantViolation(f"temperature must be > 0, got {temperature}")
    tokens = np.asarray(tokens)
    if tokens.ndim == 1:
        probs = softmax(forward(teacher, tokens) / temperature, axis=-1)
    else:
        probs = np.empty(tokens.shape + (teacher.config.vocab_size,))
        for start in range(0, tokens.shape[0], batch_size):
            chunk = tokens[start:start + batch_size]
            probs[start:start + batch_size] = softmax(forward(teacher, chunk) / temperature, axis=-1)
    return SoftLabelField.from_probs(probs, LabelOrigin(teacher.checkpoint_id, float(temperature)))


def routing_mask(entropy: np.ndarray, fraction: float) -> np.ndarray:
    """
    Mark the ⌊fraction · n⌋ lowest-entropy positions along the last axis.

    Ranking is per sequence; ties go to the lower position index.
    """
    if not 0.0 <= fraction <= 1.0:
        raise InvariantViolation(f"routing fraction must lie in [0, 1], got {fraction}")
    entropy = np.asarray(entropy)
    n = entropy.shape[-1]
    count = int(np.floor(fraction * n + 1e-12))
    mask = np.zeros(entropy.shape, dtype=bool)
    if count:
        order = np.argsort(entropy, axis=-1, kind="stable")[..., :count]
        np.put_along_axis(mask, order, True, axis=-1)
    return mask


def route_tokens(labels: SoftLabelField, fraction: float) -> Set[int]:
    """Routed supervised positions of a single sequence's labels"""
    if labels.entropy.ndim != 1:
        raise InvariantViolation("route_tokens expects the labels of a single sequence")
    mask = routing_mask(labels.rank_entropy[:-1], fraction)
    return {int(j) for j in np.flatnonzero(mask)}


def sparsify_labels(
    labels: SoftLabelField,
    mode: Union[SparsityMode, str],
    k: Union[int, str],
    seed: Optional[int] = None,
) -> SoftLabelField:
    """
    Keep k tokens per position and renormalise.

    top-k-deterministic keeps the k largest probabilities (ties to the lower
    token id). sample-k draws k distinct tokens without replacement with
    probability proportional to the distribution, using Gumbel top-k keys.
    k="all" returns the labels unchanged.
    """
    mode = SparsityMode(mode)
    if k == ALL or mode is SparsityMode.DENSE:
        return labels
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise InvariantViolation(f"k must be a positive integer or '{ALL}', got {k!r}")
    if k > labels.vocab_size:
        raise InvariantViolation(f"k={k} exceeds vocabulary size {labels.vocab_size}")

    probs = labels.probs
    if mode is SparsityMode.TOP_K:
        keep = np.argsort(-probs, axis=-1, kind="stable")[..., :k]
    else:
        rng = np.random.default_rng(seed)
        with np.errstate(divide="ignore"):
            keys = np.log(probs) + rng.gumbel(size=probs.shape)
        keep = np.argsort(-keys, axis=-1, kind="stable")[..., :k]

    sparse = np.zeros_like(probs)
    np.put_along_axis(sparse, keep, np.take_along_axis(probs, keep, axis=-1), axis=-1)
    sparse /= sparse.sum(axis=-1, keepdims=True)

    support = int(min(k, np.count_nonzero(sparse, axis=-1).max()))
    origin = replace(labels.origin, sparsity=f"{mode.value}:{k}")
    return SoftLabelField.from_probs(sparse, origin, support_k=support, routing_entropy=labels.rank_entropy)


@dataclass
class LossResult:
    """Scalar loss, its logit gradient and per-position diagnostics"""
    loss: float
    dlogits: np.ndarray
    hard: np.ndarray
    soft: np.ndarray
    per_position: np.ndarray
    routed: np.ndarray


def distill_loss(
    logits: np.ndarray,
    tokens: np.ndarray,
    labels: Optional[SoftLabelField],
    spec: LossSpec,
    targets: Optional[np.ndarray] = None,
) -> LossResult:
    """
    Mean over supervised positions of

        (1 − α) · CE(x_{j+1}, σ(z_j)) + α · [j not routed] · CE(s_{j+1}, σ(z_j))

    `targets` replaces the ground-truth next tokens when given. In classical
    mode the student is tempered too and the soft term is scaled by T².
    """
    logits = np.asarray(logits, dtype=np.float64)
    tokens = np.asarray(tokens)
    if logits.shape[:-1] != tokens.shape:
        raise InvariantViolation(f"logits {logits.shape} and tokens {tokens.shape} disagree")
    if tokens.shape[-1] < 2:
        raise InvariantViolation("Need at least two positions to supervise")
    k = logits.shape[-1]
    spec.validate_vocab(k)

    z = logits[..., :-1, :]
    target = tokens[..., 1:] if targets is None else np.asarray(targets)
    if target.shape != z.shape[:-1]:
        raise InvariantViolation(f"targets shape {target.shape} does not match supervised positions {z.shape[:-1]}")
    n = target.size

    log_p = log_softmax(z, axis=-1)
    p = np.exp(log_p)
    hard = -np.take_along_axis(log_p, target[..., None], axis=-1)[..., 0]
    one_hot = np.zeros_like(z)
    np.put_along_axis(one_hot, target[..., None], 1.0, axis=-1)

    alpha = spec.alpha
    routed = np.zeros(target.shape, dtype=bool)
    soft = np.zeros(target.shape)
    dz = np.zeros_like(z)

    if alpha > 0.0:
        if labels is None:
            raise InvariantViolation("alpha > 0 requires soft labels")
        if labels.probs.shape != logits.shape:
            raise InvariantViolation(f"labels {labels.probs.shape} and logits {logits.shape} disagree")
        s = labels.probs[..., :-1, :]
        routed = routing_mask(labels.rank_entropy[..., :-1], spec.routing_fraction)
        if spec.classical:
            t = spec.temperature
            log_q = log_softmax(z / t, axis=-1)
            soft = -(t ** 2) * (s * log_q).sum(axis=-1)
            soft_grad = t * (np.exp(log_q) - s)
        else:
            soft = -(s * log_p).sum(axis=-1)
            soft_grad = p - s
        w_soft = alpha * ~routed
        dz += w_soft[..., None] * soft_grad
    else:
        w_soft = np.zeros(target.shape)

    w_hard = np.full(target.shape, 1.0 - alpha)
    if spec.rescale_routed:
        w_hard[routed] = 1.0
    dz += w_hard[..., None] * (p - one_hot)

    per_position = w_hard * hard + w_soft * soft
    dlogits = np.zeros_like(logits)
    dlogits[..., :-1, :] = dz / n

    return LossResult(
        loss=float(per_position.mean()),
        dlogits=dlogits,
        hard=hard,
        soft=soft,
        per_position=per_position,
        routed=routed,
    )


def cross_entropy(logits: np.ndarray, tokens: np.ndarray) -> LossResult:
    """Plain next-token cross-entropy"""
    return distill_loss(logits, tokens, None, LossSpec(alpha=0.0))


def make_objective(
    tokens: np.ndarray,
    labels: Optional[SoftLabelField],
    spec: LossSpec,
    targets: Optional[np.ndarray] = None,
) -> LossFn:
    """Bind data and spec into a logits → (loss, dlogits) function for backward"""
    def objective(logits: np.ndarray):
        result = distill_loss(logits, tokens, labels, spec, targets)
        return result.loss, result.dlogits
    return objective


@dataclass(eq=False)
class SoftLabelCache:
    """Teacher labels for a whole dataset, stored dense or as index/weight records"""
    labels: SoftLabelField
    dataset_id: str

    def save(self, path: Union[str, Path]) -> str:
        labels = self.labels
        header = {
            "dataset_id": self.dataset_id,
            "checkpoint_id": labels.origin.checkpoint_id,
            "temperature": labels.origin.temperature,
            "sparsity": labels.origin.sparsity,
            "support_k": labels.support_k,
            "vocab_size": labels.vocab_size,
            "shape": list(labels.probs.shape[:-1]),
        }
        if labels.is_sparse:
            index = np.argsort(-labels.probs, axis=-1, kind="stable")[..., :labels.support_k]
            arrays = {
                "index": index.astype(np.int32),
                "weight": np.take_along_axis(labels.probs, index, axis=-1),
                "entropy": labels.entropy,
                "routing_entropy": labels.rank_entropy,
            }
        else:
            arrays = {"probs": labels.probs, "entropy": labels.entropy}
        return write_archive(path, arrays, header)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "SoftLabelCache":
        arrays, header = read_archive(path)
        if "probs" in arrays:
            probs = arrays["probs"]
        else:
            probs = np.zeros(tuple(header["shape"]) + (header["vocab_size"],))
            np.put_along_axis(probs, arrays["index"].astype(np.int64), arrays["weight"], axis=-1)
        origin = LabelOrigin(header["checkpoint_id"], header["temperature"], header["sparsity"])
        labels = SoftLabelField(
            probs=probs,
            entropy=arrays["entropy"],
            origin=origin,
            support_k=header["support_k"],
            routing_entropy=arrays.get("routing_entropy"),
        )
        return cls(labels=labels, dataset_id=header["dataset_id"])

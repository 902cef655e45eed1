"""
Training loop

Minibatch Adam training of a micro transformer against any distillation
objective. Deterministic for a fixed seed: initialisation and the per-epoch
shuffle draw from namespaced streams derived from that seed.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Union

import numpy as np

from ..core.errors import InvariantViolation, TrainingDivergedError
from .distill_loss import LossSpec, SoftLabelField, make_objective
from .markov_gen import SequenceDataset, derive_seed
from .optim import AdamState, adam_step
from .transformer import ModelConfig, ModelParams, backward, init_params

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation settings"""
    epochs: int = 6
    batch_size: int = 64
    lr: float = 3e-4
    warmup_fraction: float = 0.01
    checkpoints: int = 0
    log_every: int = 50

    def __post_init__(self):
        if self.epochs < 1:
            raise InvariantViolation(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise InvariantViolation(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise InvariantViolation(f"warmup_fraction must lie in [0, 1), got {self.warmup_fraction}")


@dataclass
class TrainSnapshot:
    """Parameters captured part-way through training"""
    step: int
    epoch: int
    samples_seen: int
    params: ModelParams


@dataclass
class TrainResult:
    """Final parameters, optimizer state, per-step loss trace and snapshots"""
    params: ModelParams
    state: AdamState
    loss_trace: np.ndarray
    snapshots: List[TrainSnapshot] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return self.state.step

    @property
    def final_loss(self) -> float:
        return float(self.loss_trace[-1])


def snapshot_steps(total_steps: int, count: int) -> List[int]:
    """`count` evenly spaced steps ending at total_steps"""
    if count <= 0:
        return []
    return sorted({max(1, round(total_steps * i / count)) for i in range(1, count + 1)})


def train(
    model_config: ModelConfig,
    dataset: Union[SequenceDataset, np.ndarray],
    spec: LossSpec,
    train_config: TrainConfig,
    seed: int,
    labels: Optional[SoftLabelField] = None,
    target_override: Optional[np.ndarray] = None,
) -> TrainResult:
    """
    Train a freshly initialised model on `dataset`.

    `labels` are the per-position soft labels aligned with the dataset's
    sequences; they are required when spec.alpha > 0. `target_override`
    replaces the ground-truth next tokens (shape (n, L − 1)).
    """
    sequences = dataset.sequences if isinstance(dataset, SequenceDataset) else np.asarray(dataset)
    n = sequences.shape[0]
    if n == 0:
        raise InvariantViolation("Cannot train on an empty dataset")
    if spec.alpha > 0 and labels is None:
        raise InvariantViolation("Distillation arms need soft labels")
    if labels is not None and labels.probs.shape[:2] != sequences.shape:
        raise InvariantViolation(f"labels {labels.probs.shape[:2]} do not align with sequences {sequences.shape}")

    config = replace(model_config, seed=derive_seed("init", seed))
    params = init_params(config)
    steps_per_epoch = math.ceil(n / train_config.batch_size)
    total_steps = train_config.epochs * steps_per_epoch
    warmup = int(round(train_config.warmup_fraction * total_steps))
    state = AdamState.create(params.tensors, train_config.lr, total_steps, warmup)
    capture = set(snapshot_steps(total_steps, train_config.checkpoints))

    shuffle_rng = np.random.default_rng(derive_seed("shuffle", seed))
    losses: List[float] = []
    snapshots: List[TrainSnapshot] = []
    samples_seen = 0

    logger.info(
        f"Training d_model={config.d_model} layers={config.n_layers} on {n} sequences "
        f"for {total_steps} steps (alpha={spec.alpha}, T={spec.temperature}, x={spec.routing_fraction})"
    )

    for epoch in range(train_config.epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, train_config.batch_size):
            idx = order[start:start + train_config.batch_size]
            objective = make_objective(
                sequences[idx],
                labels[idx] if labels is not None else None,
                spec,
                target_override[idx] if target_override is not None else None,
            )
            loss, grads = backward(params, sequences[idx], objective)
            if not math.isfinite(loss):
                logger.error(f"Loss became {loss} at step {state.step + 1} (epoch {epoch})")
                raise TrainingDivergedError(state.step + 1, epoch, loss)

            tensors, state = adam_step(params.tensors, grads, state, state.step / total_steps)
            params = ModelParams(config, tensors)
            losses.append(loss)
            samples_seen += len(idx)

            if state.step in capture:
                snapshots.append(TrainSnapshot(state.step, epoch, samples_seen, params.copy()))
            if train_config.log_every and state.step % train_config.log_every == 0:
                logger.info(
                    f"step {state.step}/{total_steps} epoch {epoch} loss {loss:.4f} "
                    f"lr {state.learning_rate(state.step / total_steps):.2e}"
                )

    return TrainResult(params=params, state=state, loss_trace=np.array(losses), snapshots=snapshots)

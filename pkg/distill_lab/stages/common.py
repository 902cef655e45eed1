"""
Helpers shared by the pipeline stages: turning config sections into sandbox
objects and loading the artifacts earlier stages wrote.
"""

from typing import Dict, List, Optional, Tuple

from ..core.artifacts import ArtifactStore, Layout
from ..core.config_manager import ArmConfig, ExperimentConfig, ModelSection
from ..core.errors import ArtifactError
from ..sandbox.distill_loss import ALL, LossSpec, SoftLabelCache
from ..sandbox.markov_gen import (
    EntropyThresholds,
    SequenceDataset,
    TransitionMatrix,
    TriggerSpec,
    boost_triggers,
    build_matrix,
    choose_triggers,
    class_plan_from_fractions,
    derive_seed,
    load_dataset,
    load_matrix,
)
from ..sandbox.trainer import TrainConfig
from ..sandbox.transformer import ModelConfig, ModelParams, load_checkpoint

TEACHER = "teacher"
SPLITS = ("teacher", "student", "eval")


def student_model(arm: str) -> str:
    return f"student-{arm}"


def build_experiment_matrix(config: ExperimentConfig) -> Tuple[TransitionMatrix, TriggerSpec]:
    """Transition matrix and trigger set, fixed per experiment by data.matrix_seed"""
    data = config.data
    plan = class_plan_from_fractions(data.k, data.entropy_plan, derive_seed("class-plan", data.matrix_seed))
    matrix = build_matrix(
        data.k,
        plan,
        derive_seed("matrix", data.matrix_seed),
        thresholds=EntropyThresholds(**data.thresholds),
        low_support=tuple(data.low_support),
        medium_ratio=data.medium_ratio,
        high_concentration=data.high_concentration,
    )
    triggers = choose_triggers(data.k, data.triggers, derive_seed("triggers", data.matrix_seed))
    return boost_triggers(matrix, triggers, data.trigger_boost), triggers


def model_config(section: ModelSection, config: ExperimentConfig) -> ModelConfig:
    return ModelConfig(
        vocab_size=config.data.k,
        d_model=section.d_model,
        n_layers=section.n_layers,
        n_heads=section.n_heads,
        max_len=config.data.length,
    )


def train_config(config: ExperimentConfig, epochs: int, checkpoints: int = 0) -> TrainConfig:
    training = config.training
    return TrainConfig(
        epochs=epochs,
        batch_size=training.batch_size,
        lr=training.lr,
        warmup_fraction=training.warmup_fraction,
        checkpoints=checkpoints,
        log_every=training.log_every,
    )


def loss_spec(arm: ArmConfig) -> LossSpec:
    return LossSpec(
        alpha=arm.alpha,
        temperature=arm.temperature,
        routing_fraction=arm.routing_fraction,
        sparsity_mode=arm.sparsity_mode,
        sparsity_k=arm.sparsity_k,
        classical=arm.classical,
        rescale_routed=arm.rescale_routed,
    )


def label_key(arm: ArmConfig) -> Optional[str]:
    """Name of the soft-label cache an arm reads, None for hard-label arms"""
    if arm.alpha <= 0.0:
        return None
    k = ALL if arm.sparsity_mode == "dense" else arm.sparsity_k
    mode = "dense" if k == ALL else arm.sparsity_mode
    return f"T{arm.temperature!r}-{mode}-{k}"


def label_requests(config: ExperimentConfig) -> Dict[str, ArmConfig]:
    """One representative arm per distinct soft-label cache"""
    requests: Dict[str, ArmConfig] = {}
    for arm in config.students:
        key = label_key(arm)
        if key is not None:
            requests.setdefault(key, arm)
    return requests


def select_arms(config: ExperimentConfig, names: Optional[List[str]]) -> List[ArmConfig]:
    if names is None:
        return list(config.students)
    return [config.arm(name) for name in names]


def load_split(store: ArtifactStore, seed: int, split: str) -> SequenceDataset:
    relpath = Layout.dataset(seed, split)
    if not store.exists(relpath):
        raise ArtifactError(f"Missing dataset {relpath}; run 'generate' first")
    dataset, _ = load_dataset(store.root / relpath)
    return dataset


def load_experiment_matrix(store: ArtifactStore) -> TransitionMatrix:
    if not store.exists(Layout.MATRIX):
        raise ArtifactError(f"Missing {Layout.MATRIX}; run 'generate' first")
    return load_matrix(store.root / Layout.MATRIX)


def load_model(store: ArtifactStore, relpath: str) -> ModelParams:
    if not store.exists(relpath):
        raise ArtifactError(f"Missing checkpoint {relpath}")
    params, _ = load_checkpoint(store.root / relpath)
    return params


def load_labels(store: ArtifactStore, seed: int, key: str, dataset: SequenceDataset) -> SoftLabelCache:
    relpath = Layout.labels(seed, key)
    if not store.exists(relpath):
        raise ArtifactError(f"Missing soft-label cache {relpath}; run 'cache-labels' first")
    cache = SoftLabelCache.load(store.root / relpath)
    if cache.dataset_id != dataset.dataset_id:
        raise ArtifactError(
            f"{relpath} was computed for dataset {cache.dataset_id}, not {dataset.dataset_id}"
        )
    return cache


def model_names(config: ExperimentConfig) -> List[str]:
    return [TEACHER] + [student_model(arm.name) for arm in config.students]


def model_checkpoint(seed: int, model: str) -> str:
    if model == TEACHER:
        return Layout.teacher(seed)
    return Layout.student(seed, model[len("student-"):])

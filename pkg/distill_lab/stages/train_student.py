"""
train-student Stage

Trains one student per configured arm and replicate. Every arm of a
replicate sees the same student split, the same initialisation and the same
batch order; only the objective differs.
"""

import logging
from typing import Any, Dict, List, Optional

from ..core.artifacts import Layout
from ..core.base_operation import (
    ParameterDefinition,
    ParameterType,
    PerSeedStageHandler,
    StageContext,
    StageMetadata,
    seeds_parameter,
)
from ..sandbox.markov_gen import derive_seed
from ..sandbox.trainer import train
from ..sandbox.transformer import save_checkpoint
from .common import label_key, load_labels, load_split, loss_spec, model_config, select_arms, student_model, train_config

logger = logging.getLogger(__name__)

STAGE_NAME = "train-student"
STAGE_DESCRIPTION = "Train the CE and distilled student arms on the student split"
STAGE_DEPENDS = ["cache-labels"]


def arms_parameter() -> ParameterDefinition:
    return ParameterDefinition(
        name="arms",
        type=ParameterType.ARRAY,
        description="Student arms to process (defaults to every configured arm)",
        required=False,
        validation=lambda v: all(isinstance(a, str) for a in v),
    )


class TrainStudentStage(PerSeedStageHandler):

    @property
    def metadata(self) -> StageMetadata:
        return StageMetadata(
            name=STAGE_NAME,
            description=STAGE_DESCRIPTION,
            depends=STAGE_DEPENDS,
            config_sections=["student", "students", "training"],
            parameters=[seeds_parameter(), arms_parameter()],
            tags=["training", "distillation"],
        )

    async def execute_seed(self, context: StageContext, seed: int, arms: Optional[List[str]] = None, **params) -> Dict[str, Any]:
        config = context.config
        store = context.store
        dataset = load_split(store, seed, "student")
        architecture = model_config(config.student, config)
        schedule = train_config(config, config.training.student_epochs, config.training.checkpoints)

        summary = {}
        for arm in select_arms(config, arms):
            key = label_key(arm)
            labels = load_labels(store, seed, key, dataset).labels if key else None
            result = train(architecture, dataset, loss_spec(arm), schedule, seed=derive_seed("student", seed), labels=labels)

            model = student_model(arm.name)
            context.produced(store.save(Layout.student(seed, arm.name), save_checkpoint, result.params, result.state, stage=STAGE_NAME))
            snapshots = []
            for snap in result.snapshots:
                relpath = Layout.snapshot(seed, arm.name, snap.step)
                context.produced(store.save(relpath, save_checkpoint, snap.params, stage=STAGE_NAME))
                snapshots.append({"step": snap.step, "epoch": snap.epoch, "samples_seen": snap.samples_seen, "path": relpath})

            log = {
                "model": model,
                "arm": arm.name,
                "checkpoint_id": result.params.checkpoint_id,
                "dataset_id": dataset.dataset_id,
                "labels": key,
                "steps": result.steps,
                "final_loss": result.final_loss,
                "loss_trace": [float(x) for x in result.loss_trace],
                "snapshots": snapshots,
            }
            context.produced(store.write_json(Layout.training_log(seed, model), log, stage=STAGE_NAME))
            summary[arm.name] = {"checkpoint_id": result.params.checkpoint_id, "final_loss": result.final_loss}
            logger.info(f"seed {seed}: {model} {result.params.checkpoint_id} final loss {result.final_loss:.4f}")
        return summary


def get_builtin_stage() -> TrainStudentStage:
    return TrainStudentStage()

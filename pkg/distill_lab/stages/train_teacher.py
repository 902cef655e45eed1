"""
train-teacher Stage

Trains the teacher transformer with plain cross-entropy on the full teacher
split of every replicate, keeping `training.checkpoints` snapshots so the
eval stage can follow its held-out cross-entropy.
"""

import logging
from typing import Any, Dict

from ..core.artifacts import Layout
from ..core.base_operation import PerSeedStageHandler, StageContext, StageMetadata, seeds_parameter
from ..sandbox.distill_loss import LossSpec
from ..sandbox.markov_gen import derive_seed
from ..sandbox.trainer import train
from ..sandbox.transformer import save_checkpoint
from .common import TEACHER, load_split, model_config, train_config

logger = logging.getLogger(__name__)

STAGE_NAME = "train-teacher"
STAGE_DESCRIPTION = "Train the teacher model on the teacher split"
STAGE_DEPENDS = ["generate"]


class TrainTeacherStage(PerSeedStageHandler):

    @property
    def metadata(self) -> StageMetadata:
        return StageMetadata(
            name=STAGE_NAME,
            description=STAGE_DESCRIPTION,
            depends=STAGE_DEPENDS,
            config_sections=["teacher", "training"],
            parameters=[seeds_parameter()],
            tags=["training"],
        )

    async def execute_seed(self, context: StageContext, seed: int, **params) -> Dict[str, Any]:
        config = context.config
        store = context.store
        dataset = load_split(store, seed, "teacher")

        result = train(
            model_config(config.teacher, config),
            dataset,
            LossSpec(alpha=0.0),
            train_config(config, config.training.teacher_epochs, config.training.checkpoints),
            seed=derive_seed("teacher", seed),
        )
        context.produced(store.save(Layout.teacher(seed), save_checkpoint, result.params, result.state, stage=STAGE_NAME))
        snapshots = []
        for snap in result.snapshots:
            relpath = Layout.teacher_snapshot(seed, snap.step)
            context.produced(store.save(relpath, save_checkpoint, snap.params, stage=STAGE_NAME))
            snapshots.append({"step": snap.step, "epoch": snap.epoch, "samples_seen": snap.samples_seen, "path": relpath})

        log = {
            "model": TEACHER,
            "checkpoint_id": result.params.checkpoint_id,
            "dataset_id": dataset.dataset_id,
            "steps": result.steps,
            "final_loss": result.final_loss,
            "loss_trace": [float(x) for x in result.loss_trace],
            "snapshots": snapshots,
        }
        context.produced(store.write_json(Layout.training_log(seed, TEACHER), log, stage=STAGE_NAME))
        logger.info(f"seed {seed}: teacher {result.params.checkpoint_id} final loss {result.final_loss:.4f}")
        return {"checkpoint_id": result.params.checkpoint_id, "final_loss": result.final_loss, "steps": result.steps}


def get_builtin_stage() -> TrainTeacherStage:
    return TrainTeacherStage()

"""
eval Stage

Scores the teacher and every student (final checkpoint and training
snapshots) on the replicate's held-out set: induction accuracy at repeat
trigger positions and KL to the true rows per entropy class.
"""

import logging
from typing import Any, Dict, List, Optional

from ..core.artifacts import Layout
from ..core.base_operation import PerSeedStageHandler, StageContext, StageMetadata, seeds_parameter
from ..sandbox.eval_suite import TransformerPredictor, evaluate, held_out_cross_entropy
from ..sandbox.markov_gen import SequenceDataset, TransitionMatrix
from ..sandbox.transformer import ModelParams
from .common import (
    TEACHER,
    load_experiment_matrix,
    load_model,
    load_split,
    select_arms,
    student_model,
)
from .train_student import arms_parameter

logger = logging.getLogger(__name__)

STAGE_NAME = "eval"
STAGE_DESCRIPTION = "Evaluate teacher and students on the held-out set"
STAGE_DEPENDS = ["train-student"]


def _score(
    params: ModelParams,
    matrix: TransitionMatrix,
    eval_set: SequenceDataset,
    batch_size: int,
    metadata: Dict[str, Any],
) -> Dict[str, Any]:
    predictor = TransformerPredictor(params, batch_size)
    report = evaluate(predictor, matrix, eval_set, params.checkpoint_id, metadata)
    report.metadata["held_out_cross_entropy"] = held_out_cross_entropy(predictor, eval_set)
    return report.to_dict()


class EvaluateStage(PerSeedStageHandler):

    @property
    def metadata(self) -> StageMetadata:
        return StageMetadata(
            name=STAGE_NAME,
            description=STAGE_DESCRIPTION,
            depends=STAGE_DEPENDS,
            config_sections=["eval"],
            parameters=[seeds_parameter(), arms_parameter()],
            tags=["evaluation"],
        )

    async def execute_seed(self, context: StageContext, seed: int, arms: Optional[List[str]] = None, **params) -> Dict[str, Any]:
        config = context.config
        store = context.store
        matrix = load_experiment_matrix(store)
        eval_set = load_split(store, seed, "eval")
        batch_size = config.eval.batch_size
        summary: Dict[str, Any] = {}

        teacher_log = store.read_json(Layout.training_log(seed, TEACHER))
        teacher_base = {"model": TEACHER, "seed": seed, "dataset_id": teacher_log["dataset_id"]}
        teacher_progress = [
            _score(
                load_model(store, snap["path"]), matrix, eval_set, batch_size,
                {**teacher_base, "step": snap["step"], "samples_seen": snap["samples_seen"]},
            )
            for snap in teacher_log.get("snapshots", [])
        ]
        context.produced(store.write_json(Layout.report(seed, f"{TEACHER}.progress"), teacher_progress, stage=STAGE_NAME))
        report = _score(
            load_model(store, Layout.teacher(seed)), matrix, eval_set, batch_size,
            {**teacher_base, "step": teacher_log["steps"],
             "samples_seen": config.training.teacher_epochs * config.data.teacher_sequences},
        )
        context.produced(store.write_json(Layout.report(seed, TEACHER), report, stage=STAGE_NAME))
        summary[TEACHER] = report["induction_accuracy"]

        for arm in select_arms(config, arms):
            model = student_model(arm.name)
            log = store.read_json(Layout.training_log(seed, model))
            base = {"model": model, "arm": arm.name, "seed": seed, "dataset_id": log["dataset_id"], "labels": log["labels"]}

            progress = []
            for snap in log["snapshots"]:
                snap_report = _score(
                    load_model(store, snap["path"]), matrix, eval_set, batch_size,
                    {**base, "step": snap["step"], "samples_seen": snap["samples_seen"]},
                )
                progress.append(snap_report)
            context.produced(store.write_json(Layout.report(seed, f"{model}.progress"), progress, stage=STAGE_NAME))

            samples = config.training.student_epochs * config.data.student_sequences
            final = _score(
                load_model(store, Layout.student(seed, arm.name)), matrix, eval_set, batch_size,
                {**base, "step": log["steps"], "samples_seen": samples},
            )
            context.produced(store.write_json(Layout.report(seed, model), final, stage=STAGE_NAME))
            summary[model] = final["induction_accuracy"]
            logger.info(
                f"seed {seed}: {model} induction {final['induction_accuracy']} "
                f"KL high {final['kl_by_class'].get('high')} low {final['kl_by_class'].get('low')}"
            )
        return summary


def get_builtin_stage() -> EvaluateStage:
    return EvaluateStage()

"""
generate Stage

Builds the experiment's transition matrix and trigger set and samples the
teacher, student and held-out splits for every replicate seed.
"""

import logging
from typing import Any, Dict

from ..core.artifacts import Layout
from ..core.base_operation import PerSeedStageHandler, StageContext, StageMetadata, seeds_parameter
from ..sandbox.eval_suite import build_eval_set, check_disjoint
from ..sandbox.markov_gen import EntropyClass, derive_seed, sample_sequences, save_dataset, save_matrix, trigger_violations
from .common import build_experiment_matrix

logger = logging.getLogger(__name__)

STAGE_NAME = "generate"
STAGE_DESCRIPTION = "Sample the Markov sandbox datasets (teacher, student and eval splits)"
STAGE_DEPENDS = []


class GenerateStage(PerSeedStageHandler):
    """Writes data/matrix.npz and data/seed-<s>/{teacher,student,eval}.npz"""

    @property
    def metadata(self) -> StageMetadata:
        return StageMetadata(
            name=STAGE_NAME,
            description=STAGE_DESCRIPTION,
            depends=STAGE_DEPENDS,
            config_sections=["experiment", "data"],
            parameters=[seeds_parameter()],
            tags=["data"],
        )

    async def pre_execute(self, context: StageContext, params: Dict[str, Any]) -> Dict[str, Any]:
        matrix, triggers = build_experiment_matrix(context.config)
        context.metadata["matrix"] = matrix
        context.metadata["triggers"] = triggers
        context.produced(context.store.save(Layout.MATRIX, lambda path, m: save_matrix(m, path), matrix, stage=STAGE_NAME))
        counts = {c.value: len(matrix.rows_in_class(c)) for c in EntropyClass}
        logger.info(f"Matrix {matrix.matrix_id}: k={matrix.k}, rows per class {counts}, triggers {list(triggers.tokens)}")
        return params

    async def execute_seed(self, context: StageContext, seed: int, **params) -> Dict[str, Any]:
        data = context.config.data
        matrix = context.metadata["matrix"]
        triggers = context.metadata["triggers"]
        store = context.store

        teacher = sample_sequences(
            matrix, triggers, data.teacher_sequences, data.length,
            derive_seed("teacher-data", seed), data.per_trigger_targets,
        )
        student = teacher.subset(data.student_sequences)
        held_out = build_eval_set(matrix, triggers, seed, data.eval_sequences, data.length, data.per_trigger_targets)
        check_disjoint(teacher, held_out)

        summary: Dict[str, Any] = {"matrix_id": matrix.matrix_id, "triggers": list(triggers.tokens)}
        for split, dataset in (("teacher", teacher), ("student", student), ("eval", held_out)):
            violations = trigger_violations(dataset)
            relpath = Layout.dataset(seed, split)
            context.produced(store.save(relpath, lambda path, d, m: save_dataset(d, path, m), dataset, matrix, stage=STAGE_NAME))
            summary[split] = {"dataset_id": dataset.dataset_id, "n": dataset.n, "trigger_violations": violations}
            logger.info(f"seed {seed}: {split} split {dataset.dataset_id} with {dataset.n} sequences")
        return summary


def get_builtin_stage() -> GenerateStage:
    return GenerateStage()

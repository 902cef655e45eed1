"""
cache-labels Stage

Runs each replicate's teacher over the student split once per distinct
(temperature, sparsity) combination the student arms ask for and stores the
resulting soft labels.
"""

import logging
from typing import Any, Dict

from ..core.artifacts import Layout
from ..core.base_operation import PerSeedStageHandler, StageContext, StageMetadata, seeds_parameter
from ..sandbox.distill_loss import SoftLabelCache, sparsify_labels, teacher_soft_labels
from ..sandbox.markov_gen import derive_seed
from .common import label_requests, load_model, load_split

logger = logging.getLogger(__name__)

STAGE_NAME = "cache-labels"
STAGE_DESCRIPTION = "Cache teacher soft labels over the student split"
STAGE_DEPENDS = ["train-teacher"]


class CacheLabelsStage(PerSeedStageHandler):

    @property
    def metadata(self) -> StageMetadata:
        return StageMetadata(
            name=STAGE_NAME,
            description=STAGE_DESCRIPTION,
            depends=STAGE_DEPENDS,
            config_sections=["students"],
            parameters=[seeds_parameter()],
            tags=["distillation"],
        )

    async def execute_seed(self, context: StageContext, seed: int, **params) -> Dict[str, Any]:
        store = context.store
        requests = label_requests(context.config)
        if not requests:
            logger.info(f"seed {seed}: no student arm uses soft labels")
            return {}

        dataset = load_split(store, seed, "student")
        teacher = load_model(store, Layout.teacher(seed))
        batch_size = context.config.eval.batch_size
        dense_by_temperature = {}
        summary = {}
        for key, arm in sorted(requests.items()):
            if arm.temperature not in dense_by_temperature:
                dense_by_temperature[arm.temperature] = teacher_soft_labels(
                    teacher, dataset.sequences, arm.temperature, batch_size
                )
            labels = sparsify_labels(
                dense_by_temperature[arm.temperature],
                arm.sparsity_mode,
                arm.sparsity_k,
                seed=derive_seed("labels", seed),
            )
            labels.validate()
            cache = SoftLabelCache(labels=labels, dataset_id=dataset.dataset_id)
            context.produced(store.save(Layout.labels(seed, key), cache.save, stage=STAGE_NAME))
            summary[key] = {
                "teacher": teacher.checkpoint_id,
                "mean_entropy": float(labels.entropy.mean()),
                "sparsity": labels.origin.sparsity,
            }
            logger.info(f"seed {seed}: cached labels {key} (mean entropy {summary[key]['mean_entropy']:.4f})")
        return summary


def get_builtin_stage() -> CacheLabelsStage:
    return CacheLabelsStage()

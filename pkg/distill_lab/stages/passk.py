"""
passk Stage

Closed-form pass@k analysis (the three-classifier curves, the crossover
point and the pass@k-optimal binary policy) plus sampled pass@k and the
temperature frontier of every trained model on verifiable held-out items.
"""

import logging
from typing import Any, Dict, List, Optional

import numpy as np

from ..core.artifacts import Layout
from ..core.base_operation import PerSeedStageHandler, StageContext, StageMetadata, seeds_parameter
from ..sandbox.eval_suite import TransformerPredictor
from ..sandbox.markov_gen import derive_seed
from ..sandbox.passk import (
    TRIGGER_COPY,
    build_passk_items,
    crossover_point,
    optimal_alpha,
    sample_and_score,
    temperature_frontier,
    temperature_grid,
)
from .common import load_experiment_matrix, load_model, load_split, model_checkpoint, model_names

logger = logging.getLogger(__name__)

STAGE_NAME = "passk"
STAGE_DESCRIPTION = "Analytic pass@k curves and sampled pass@k of the trained models"
STAGE_DEPENDS = ["train-student"]

POLICY_GRID = np.linspace(0.01, 0.99, 99)


def analytic_summary(epsilon: float, ks: List[int], policy_ks: List[int]) -> Dict[str, Any]:
    crossover = crossover_point(epsilon, ks)
    return {
        "epsilon": epsilon,
        "crossover_k": crossover.k,
        "curves": {name: {str(k): curve[k] for k in curve.ks} for name, curve in crossover.curves.items()},
        "optimal_policy": {
            str(k): [[float(p), optimal_alpha(float(p), k)] for p in POLICY_GRID] for k in policy_ks
        },
    }


class PassKStage(PerSeedStageHandler):

    @property
    def metadata(self) -> StageMetadata:
        return StageMetadata(
            name=STAGE_NAME,
            description=STAGE_DESCRIPTION,
            depends=STAGE_DEPENDS,
            config_sections=["passk", "eval"],
            parameters=[seeds_parameter()],
            tags=["evaluation", "passk"],
        )

    async def pre_execute(self, context: StageContext, params: Dict[str, Any]) -> Dict[str, Any]:
        section = context.config.passk
        summary = analytic_summary(section.epsilon, section.curve_ks, [1] + [k for k in section.curve_ks if k > 1])
        context.produced(context.store.write_json(Layout.ANALYTIC_PASSK, summary, stage=STAGE_NAME))
        logger.info(f"pass@k crossover at k={summary['crossover_k']} for eps={section.epsilon}")
        return params

    async def execute_seed(self, context: StageContext, seed: int, **params) -> Dict[str, Any]:
        config = context.config
        section = config.passk
        store = context.store
        matrix = load_experiment_matrix(store)
        eval_set = load_split(store, seed, "eval")
        task = build_passk_items(eval_set, matrix, section.max_items, derive_seed("passk-items", seed + section.seed))
        kinds = sorted({item.kind for item in task.items})
        temperatures = temperature_grid(section.temperature_max, section.temperature_step)
        sample_seed = derive_seed("passk", seed + section.seed)

        summary = {}
        for model in model_names(config):
            predictor = TransformerPredictor(load_model(store, model_checkpoint(seed, model)), config.eval.batch_size)
            by_kind = {}
            for kind in kinds:
                curve = sample_and_score(predictor, task.of_kind(kind), section.ks, section.n, 1.0, sample_seed)
                by_kind[kind] = {"items": len(curve.correct), "pass_at_k": {str(k): curve[k] for k in curve.ks}}
            frontier = temperature_frontier(predictor, task, temperatures, sample_seed, section.n)
            result = {
                "model": model,
                "seed": seed,
                "n": section.n,
                "eval_set_id": eval_set.dataset_id,
                "by_kind": by_kind,
                "frontier": [
                    {"temperature": p.temperature, "pass_at_1": p.pass_at_1, "pass_at_n": p.pass_at_n} for p in frontier
                ],
            }
            context.produced(store.write_json(Layout.passk(seed, model), result, stage=STAGE_NAME))
            copy = by_kind.get(TRIGGER_COPY, {}).get("pass_at_k", {})
            summary[model] = copy.get("1")
        return summary


def get_builtin_stage() -> PassKStage:
    return PassKStage()

"""
complexity Stage

Tabular bigram sample-complexity sweep: from-scratch MLE against
distillation from the true rows on p-sparse teachers, plus the coupon
collector tail checks behind both estimators' sample requirements.
"""

import logging
from dataclasses import asdict
from typing import Any, Dict

from ..core.artifacts import Layout
from ..core.base_operation import BaseStageHandler, StageContext, StageMetadata
from ..sandbox.markov_gen import build_sparse_matrix, derive_seed
from ..sandbox.tabular_bigram import (
    coupon_exceedance,
    distill_sample_requirement,
    expected_coupon_draws,
    run_complexity_sweep,
    scratch_sample_requirement,
    summarize_sweep,
)

logger = logging.getLogger(__name__)

STAGE_NAME = "complexity"
STAGE_DESCRIPTION = "Sample-complexity sweep of the tabular bigram estimators"
STAGE_DEPENDS = []

TAIL_DELTAS = (0.1, 0.01)


class ComplexityStage(BaseStageHandler):

    @property
    def metadata(self) -> StageMetadata:
        return StageMetadata(
            name=STAGE_NAME,
            description=STAGE_DESCRIPTION,
            depends=STAGE_DEPENDS,
            config_sections=["complexity"],
            tags=["analysis"],
        )

    async def execute(self, context: StageContext, **params) -> Dict[str, Any]:
        section = context.config.complexity
        store = context.store
        k = section.k

        sweeps = []
        for p in section.p_values:
            matrix = build_sparse_matrix(k, p, derive_seed(f"complexity-matrix-{p}", section.seed))
            trials = run_complexity_sweep(
                k, p, section.epsilon, section.delta, section.sample_grid,
                trials=section.trials, seed=derive_seed(f"complexity-{p}", section.seed), matrix=matrix,
            )
            summary = summarize_sweep(trials)
            sweeps.append({
                "p": p,
                "scratch_requirement": scratch_sample_requirement(k, p, section.epsilon, section.delta),
                "distill_requirement": distill_sample_requirement(k, section.delta),
                "crossover": summary.crossover,
                "points": [asdict(point) for point in summary.points],
                "trials": [trial.to_record() for trial in trials],
            })
            logger.info(f"p={p}: first eps-accurate grid size {summary.crossover}")

        context.produced(store.write_json(
            Layout.COMPLEXITY,
            {"k": k, "epsilon": section.epsilon, "delta": section.delta, "trials": section.trials, "sweeps": sweeps},
            stage=STAGE_NAME,
        ))

        checks = []
        for delta in sorted({section.delta, *TAIL_DELTAS}, reverse=True):
            check = coupon_exceedance(k, delta, section.coupon_trials, derive_seed("coupon", section.seed))
            checks.append({**asdict(check), "exceedance_rate": check.exceedance_rate, "holds": check.holds})
            if not check.holds:
                logger.warning(f"Coupon tail bound exceeded at delta={delta}: {check.exceedances}/{check.trials}")
        context.produced(store.write_json(
            Layout.COUPON,
            {"k": k, "expected_draws": expected_coupon_draws(k), "checks": checks},
            stage=STAGE_NAME,
        ))

        return {"summary": {str(s["p"]): s["crossover"] for s in sweeps}}


def get_builtin_stage() -> ComplexityStage:
    return ComplexityStage()

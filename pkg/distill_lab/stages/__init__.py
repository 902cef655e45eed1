"""
Pipeline stages

- generate: sandbox matrix and the teacher/student/eval splits
- train-teacher: the teacher model
- cache-labels: teacher soft labels over the student split
- train-student: CE and distilled student arms
- eval: induction accuracy and per-class KL
- passk: analytic and sampled pass@k
- complexity: tabular estimator sample-complexity sweep
- figures: plot-data tables
"""

from typing import Dict

from ..core.base_operation import BaseStageHandler
from . import cache_labels, complexity, evaluate, figures, generate, passk, train_student, train_teacher

STAGE_MODULES = [generate, train_teacher, cache_labels, train_student, evaluate, passk, complexity, figures]


def get_builtin_stages() -> Dict[str, BaseStageHandler]:
    """Stage name → handler, in pipeline order"""
    return {module.STAGE_NAME: module.get_builtin_stage() for module in STAGE_MODULES}


__all__ = ["STAGE_MODULES", "get_builtin_stages"]

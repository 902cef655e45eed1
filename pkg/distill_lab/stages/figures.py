"""
figures Stage

Turns reports into plot-data tables, one tab-separated file per figure:

- kl_vs_progress      KL per entropy class against training steps and samples
- induction           induction accuracy against training progress
- passk_curves        the C1/C2/C3 analytic pass@k table
- passk_sampled       sampled pass@k of every model per item kind
- frontier-<model>    pass@1 against pass@n, one row per (temperature, seed)
- complexity          sample-complexity sweep with each estimator's crossover
- teacher_progress    teacher held-out cross-entropy against training progress
- claims              directional comparisons per seed with their median and standard error

Every table starts with provenance lines (config hash, seeds). Tables that
compare CE and distilled students first check that all arms of a replicate
trained on the same dataset and were scored on the same eval set.
"""

import logging
import math
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from ..core.artifacts import ArtifactStore, Layout
from ..core.base_operation import BaseStageHandler, StageContext, StageMetadata
from ..core.config_manager import DEFAULT_SCHEMA, ArmConfig, ExperimentConfig
from ..core.errors import InvariantViolation
from .common import TEACHER, model_names, student_model

logger = logging.getLogger(__name__)

STAGE_NAME = "figures"
STAGE_DESCRIPTION = "Emit plot-data tables for every figure"
STAGE_DEPENDS = ["eval", "passk", "complexity"]

CLASSES = ("low", "medium", "high")

LESS_THAN_ZERO = "< 0"
AT_LEAST_ZERO = ">= 0"
WITHIN_TWO_SE = "|median| < 2 se"

Reports = Dict[int, Dict[str, Dict[str, Any]]]
Progress = Dict[int, Dict[str, List[Dict[str, Any]]]]


def _provenance(config: ExperimentConfig, **extra) -> Dict[str, Any]:
    return {"config_hash": config.config_hash, "seeds": config.experiment.seeds, **extra}


def check_controlled(reports: Reports) -> None:
    """All students of a replicate share their training dataset and eval set"""
    for seed, by_model in reports.items():
        students = {m: r for m, r in by_model.items() if m != TEACHER}
        datasets = {r["metadata"]["dataset_id"] for r in students.values()}
        eval_sets = {r["eval_set_id"] for r in by_model.values()}
        if len(datasets) > 1:
            raise InvariantViolation(f"seed {seed}: student arms trained on different datasets {sorted(datasets)}")
        if len(eval_sets) > 1:
            raise InvariantViolation(f"seed {seed}: models scored on different eval sets {sorted(eval_sets)}")


def _progress_rows(seed: int, model: str, reports: List[Dict[str, Any]]) -> List[List[Any]]:
    rows = []
    for report in reports:
        meta = report["metadata"]
        rows.append([seed, model, meta["step"], meta.get("samples_seen")] + [report["kl_by_class"].get(c) for c in CLASSES])
    return rows


def comparison_arms(arms: Sequence[ArmConfig]) -> Dict[str, Optional[str]]:
    """First CE arm, first vanilla distilled arm and first routed distilled arm"""
    def first(predicate) -> Optional[str]:
        return next((student_model(a.name) for a in arms if predicate(a)), None)

    def distilled(a: ArmConfig) -> bool:
        return a.alpha > 0.0 and a.sparsity_mode == "dense" and not a.classical

    return {
        "ce": first(lambda a: a.alpha == 0.0),
        "kd": first(lambda a: distilled(a) and a.routing_fraction == 0.0),
        "routed": first(lambda a: distilled(a) and a.routing_fraction > 0.0),
    }


def _difference(a: Optional[float], b: Optional[float]) -> Optional[float]:
    if a is None or b is None:
        return None
    return a - b


def _kl(report: Optional[Dict[str, Any]], cls: str) -> Optional[float]:
    return None if report is None else report["kl_by_class"].get(cls)


def _induction(report: Optional[Dict[str, Any]]) -> Optional[float]:
    return None if report is None else report["induction_accuracy"]


def _largest_ce_change(history: List[Dict[str, Any]]) -> Optional[float]:
    """Largest change in held-out cross-entropy between consecutive checkpoints"""
    by_step = {r["metadata"]["step"]: r["metadata"]["held_out_cross_entropy"] for r in history}
    values = [by_step[step] for step in sorted(by_step)]
    if len(values) < 2:
        return None
    return max(b - a for a, b in zip(values, values[1:]))


def claim_holds(expected: str, median: Optional[float], stderr: Optional[float]) -> Optional[bool]:
    if median is None:
        return None
    if expected == LESS_THAN_ZERO:
        return median < 0.0
    if expected == AT_LEAST_ZERO:
        return median >= 0.0
    if stderr is None:
        return None
    return abs(median) < 2.0 * stderr


def summarize_claims(reports: Reports, progress: Progress, arms: Dict[str, Optional[str]]) -> List[List[Any]]:
    """
    One row per directional claim: the per-seed value, its median across
    seeds, the standard error of the mean and whether the median points the
    expected way. Claims whose arms are not configured come out as NA.
    """
    ce, kd, routed = arms["ce"], arms["kd"], arms["routed"]
    claims = [
        ("kd_high_kl_below_ce", f"{kd} - {ce}", LESS_THAN_ZERO,
         lambda r, p: _difference(_kl(r.get(kd), "high"), _kl(r.get(ce), "high"))),
        ("kd_low_kl_matches_ce", f"{kd} - {ce}", WITHIN_TWO_SE,
         lambda r, p: _difference(_kl(r.get(kd), "low"), _kl(r.get(ce), "low"))),
        ("ce_induction_at_least_kd", f"{ce} - {kd}", AT_LEAST_ZERO,
         lambda r, p: _difference(_induction(r.get(ce)), _induction(r.get(kd)))),
        ("routed_induction_at_least_kd", f"{routed} - {kd}", AT_LEAST_ZERO,
         lambda r, p: _difference(_induction(r.get(routed)), _induction(r.get(kd)))),
        ("teacher_ce_decreases", f"{TEACHER} checkpoint-to-checkpoint change", LESS_THAN_ZERO,
         lambda r, p: _largest_ce_change(p.get(TEACHER, []) + [r[TEACHER]])),
    ]

    rows = []
    for name, comparison, expected, measure in claims:
        per_seed = [measure(reports[seed], progress.get(seed, {})) for seed in reports]
        values = [v for v in per_seed if v is not None and not math.isnan(v)]
        median = float(np.median(values)) if values else None
        stderr = float(np.std(values, ddof=1) / math.sqrt(len(values))) if len(values) > 1 else None
        rows.append([name, comparison, expected, *per_seed, median, stderr, len(values), claim_holds(expected, median, stderr)])
    return rows


class FiguresStage(BaseStageHandler):

    @property
    def metadata(self) -> StageMetadata:
        return StageMetadata(
            name=STAGE_NAME,
            description=STAGE_DESCRIPTION,
            depends=STAGE_DEPENDS,
            config_sections=list(DEFAULT_SCHEMA),
            tags=["figures"],
        )

    def _load_reports(self, store: ArtifactStore, config: ExperimentConfig) -> Reports:
        models = model_names(config)
        needed = [Layout.report(seed, model) for seed in config.experiment.seeds for model in models]
        needed += [Layout.report(seed, f"{model}.progress") for seed in config.experiment.seeds for model in models]
        needed += [Layout.passk(seed, model) for seed in config.experiment.seeds for model in models]
        needed += [Layout.ANALYTIC_PASSK, Layout.COMPLEXITY]
        store.require(needed, STAGE_NAME)
        return {
            seed: {model: store.read_json(Layout.report(seed, model)) for model in models}
            for seed in config.experiment.seeds
        }

    async def execute(self, context: StageContext, **params) -> Dict[str, Any]:
        config = context.config
        store = context.store
        reports = self._load_reports(store, config)
        check_controlled(reports)
        tables = {}

        progress: Progress = {
            seed: {model: store.read_json(Layout.report(seed, f"{model}.progress")) for model in by_model}
            for seed, by_model in reports.items()
        }

        kl_rows: List[List[Any]] = []
        induction_rows: List[List[Any]] = []
        teacher_rows: List[List[Any]] = []
        for seed, by_model in reports.items():
            for model, final in by_model.items():
                history = [r for r in progress[seed][model] if r["metadata"]["step"] != final["metadata"]["step"]]
                if model == TEACHER:
                    for report in history + [final]:
                        meta = report["metadata"]
                        teacher_rows.append([seed, meta["step"], meta.get("samples_seen"), meta["held_out_cross_entropy"]])
                for report in history + [final]:
                    meta = report["metadata"]
                    induction = report["induction"]
                    induction_rows.append([
                        seed, model, meta["step"], meta.get("samples_seen"),
                        report["induction_accuracy"], induction["correct"], induction["total"],
                    ])
                kl_rows.extend(_progress_rows(seed, model, history + [final]))

        tables["kl_vs_progress"] = store.write_table(
            Layout.figure("kl_vs_progress"),
            ["seed", "model", "step", "samples_seen"] + [f"kl_{c}" for c in CLASSES],
            kl_rows, _provenance(config), stage=STAGE_NAME,
        )
        tables["induction"] = store.write_table(
            Layout.figure("induction"),
            ["seed", "model", "step", "samples_seen", "induction_accuracy", "correct", "total"],
            induction_rows, _provenance(config), stage=STAGE_NAME,
        )
        tables["teacher_progress"] = store.write_table(
            Layout.figure("teacher_progress"),
            ["seed", "step", "samples_seen", "held_out_cross_entropy"],
            teacher_rows, _provenance(config), stage=STAGE_NAME,
        )
        seeds = list(reports)
        tables["claims"] = store.write_table(
            Layout.figure("claims"),
            ["claim", "comparison", "expected"] + [f"seed_{s}" for s in seeds] + ["median", "stderr", "seeds_used", "holds"],
            summarize_claims(reports, progress, comparison_arms(config.students)),
            _provenance(config), stage=STAGE_NAME,
        )

        analytic = store.read_json(Layout.ANALYTIC_PASSK)
        curves = analytic["curves"]
        ks = sorted(int(k) for k in curves["C1"])
        tables["passk_curves"] = store.write_table(
            Layout.figure("passk_curves"),
            ["k", "C1", "C2", "C3"],
            [[k] + [curves[name][str(k)] for name in ("C1", "C2", "C3")] for k in ks],
            _provenance(config, epsilon=analytic["epsilon"], crossover_k=analytic["crossover_k"]),
            stage=STAGE_NAME,
        )

        sampled_rows: List[List[Any]] = []
        frontier_rows: Dict[str, List[List[Any]]] = {}
        for seed in config.experiment.seeds:
            for model in model_names(config):
                result = store.read_json(Layout.passk(seed, model))
                for kind, entry in sorted(result["by_kind"].items()):
                    for k, value in sorted(entry["pass_at_k"].items(), key=lambda kv: int(kv[0])):
                        sampled_rows.append([seed, model, kind, entry["items"], int(k), value])
                for point in result["frontier"]:
                    frontier_rows.setdefault(model, []).append(
                        [seed, point["temperature"], point["pass_at_1"], point["pass_at_n"]]
                    )

        tables["passk_sampled"] = store.write_table(
            Layout.figure("passk_sampled"),
            ["seed", "model", "kind", "items", "k", "pass_at_k"],
            sampled_rows, _provenance(config, n=config.passk.n, temperature=1.0), stage=STAGE_NAME,
        )
        for model, rows in frontier_rows.items():
            name = f"frontier-{model}"
            tables[name] = store.write_table(
                Layout.figure(name),
                ["seed", "temperature", "pass_at_1", f"pass_at_{config.passk.n}"],
                sorted(rows, key=lambda r: (r[1], r[0])),
                _provenance(config, model=model, n=config.passk.n),
                stage=STAGE_NAME,
            )

        sweep = store.read_json(Layout.COMPLEXITY)
        complexity_rows = []
        for entry in sweep["sweeps"]:
            for point in entry["points"]:
                complexity_rows.append([
                    entry["p"], point["n_samples"], point["estimator"],
                    point["worst_row_mean_l1"], point["worst_row_stderr"], point["success"],
                    entry["crossover"].get(point["estimator"]),
                ])
        tables["complexity"] = store.write_table(
            Layout.figure("complexity"),
            ["p", "n_samples", "estimator", "worst_row_mean_l1", "stderr", "success", "crossover_n"],
            complexity_rows,
            _provenance(config, k=sweep["k"], epsilon=sweep["epsilon"], delta=sweep["delta"], trials=sweep["trials"]),
            stage=STAGE_NAME,
        )

        for relpath in tables.values():
            context.produced(relpath)
        logger.info(f"Wrote {len(tables)} plot-data tables")
        return {"summary": {"tables": sorted(tables)}}


def get_builtin_stage() -> FiguresStage:
    return FiguresStage()

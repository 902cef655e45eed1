"""
Experiment Harness

Runs pipeline stages in dependency order through the middleware chain,
publishes lifecycle events and keeps the RunRecord of the output directory
up to date.
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional, Sequence, Type

from .artifacts import ArtifactStore, Layout
from .base_operation import STATUS_ERROR, STATUS_SKIPPED, STATUS_SUCCESS, BaseStageHandler, StageContext
from .base_plugin import BasePlugin
from .config_manager import ExperimentConfig, config_hash
from .errors import ArtifactError, StageFailure
from .event_bus import RUN_COMPLETED, STAGE_COMPLETED, STAGE_FAILED, STAGE_SKIPPED, STAGE_STARTED, EventBus
from .plugin_registry import PluginRegistry

logger = logging.getLogger(__name__)

RUN_SUCCESS = "success"
RUN_FAILED = "failed"


@dataclass
class RunRecord:
    """What a run produced, keyed to the exact configuration it ran with"""
    config_hash: str
    seeds: List[int]
    status: str = RUN_SUCCESS
    stages: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    artifacts: Dict[str, str] = field(default_factory=dict)
    timings: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    finished_at: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunRecord":
        return cls(**data)

    @classmethod
    def load(cls, store: ArtifactStore) -> "RunRecord":
        if not store.exists(Layout.RUN_RECORD):
            raise ArtifactError(f"No run record under {store.root}; run the pipeline first")
        return cls.from_dict(store.read_json(Layout.RUN_RECORD))

    def completed(self, stage: str) -> bool:
        return self.stages.get(stage, {}).get("status") in (STATUS_SUCCESS, STATUS_SKIPPED)

    def verify(self, store: ArtifactStore) -> None:
        """The stored config must hash to the recorded value"""
        actual = config_hash(store.read_text(Layout.CONFIG))
        if actual != self.config_hash:
            raise ArtifactError(
                f"{Layout.CONFIG} hashes to {actual[:12]} but the run record expects {self.config_hash[:12]}"
            )


def pipeline_order(stages: Dict[str, BaseStageHandler], requested: Optional[Sequence[str]] = None) -> List[str]:
    """Dependency order of all stages, or of the requested subset"""
    unknown = [name for name in requested or [] if name not in stages]
    if unknown:
        raise ValueError(f"Unknown stages {unknown}; choose from {list(stages)}")

    order: List[str] = []
    visiting = set()

    def visit(name: str) -> None:
        if name in order:
            return
        if name in visiting:
            raise ValueError(f"Stage dependency cycle through '{name}'")
        visiting.add(name)
        for dep in stages[name].metadata.depends:
            visit(dep)
        visiting.discard(name)
        order.append(name)

    for name in stages:
        visit(name)
    if requested:
        chosen = set(requested)
        order = [name for name in order if name in chosen]
    return order


class ExperimentHarness:
    """
    Orchestrates one output directory.

    Cache keys are derived from configuration alone: a stage's key hashes its
    own config sections, parameters and version together with the keys of the
    stages it depends on, so a change upstream invalidates everything below.
    """

    def __init__(
        self,
        config: ExperimentConfig,
        stages: Optional[Dict[str, BaseStageHandler]] = None,
        plugins: Optional[Sequence[Type[BasePlugin]]] = None,
    ):
        if stages is None:
            from ..stages import get_builtin_stages
            stages = get_builtin_stages()
        if plugins is None:
            from ..plugins import get_builtin_plugins
            plugins = get_builtin_plugins()

        self.config = config
        self.stages = stages
        self.store = ArtifactStore(config.out_dir)
        self.event_bus = EventBus()
        self.plugin_registry = PluginRegistry(config.plugins)
        for plugin_class in plugins:
            self.plugin_registry.add_builtin_plugin(plugin_class)
        self._initialized = False

    async def initialize(self) -> None:
        if self._initialized:
            return
        text = self.config.definition_yaml()
        if not self.store.exists(Layout.CONFIG) or self.store.read_text(Layout.CONFIG) != text:
            self.store.write_text(Layout.CONFIG, text, stage="harness")
        await self.plugin_registry.discover_and_load()
        await self.plugin_registry.start_all()
        self._initialized = True
        logger.info(f"Harness ready in {self.store.root} (config {self.config.config_hash[:12]})")

    async def shutdown(self) -> None:
        await self.plugin_registry.stop_all()

    def cache_keys(self, params_by_stage: Optional[Dict[str, Dict[str, Any]]] = None) -> Dict[str, str]:
        params_by_stage = params_by_stage or {}
        tree = self.config.definition()
        keys: Dict[str, str] = {}
        for name in pipeline_order(self.stages):
            meta = self.stages[name].metadata
            payload = {
                "stage": name,
                "version": meta.version,
                "sections": {section: tree[section] for section in meta.config_sections},
                "params": params_by_stage.get(name, {}),
                "upstream": {dep: keys[dep] for dep in meta.depends},
            }
            keys[name] = hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()
        return keys

    async def run_stage(self, name: str, params: Optional[Dict[str, Any]] = None, cache_key: Optional[str] = None) -> Dict[str, Any]:
        """One stage through the middleware chain; raises StageFailure on error"""
        handler = self.stages[name]
        params = dict(params or {})
        context = StageContext(name, self.config, self.store, self.event_bus, cache_key=cache_key)
        chain = self.plugin_registry.get_middleware_chain()

        await self.event_bus.emit(STAGE_STARTED, {"stage": name, "cache_key": cache_key}, source="harness")
        for middleware in chain:
            params = await middleware.process_request(name, params, context)

        if context.cached_response is not None:
            result = dict(context.cached_response)
        else:
            result = await handler(context, **params)

        for middleware in reversed(chain):
            result = await middleware.process_response(name, result, context)

        status = result.get("status")
        if status == STATUS_ERROR:
            await self.event_bus.emit(STAGE_FAILED, {"stage": name, "message": result.get("message")}, source="harness")
            raise StageFailure(name, f"{result.get('error')}: {result.get('message')}", result.get("artifacts"))
        event = STAGE_SKIPPED if status == STATUS_SKIPPED else STAGE_COMPLETED
        await self.event_bus.emit(event, {"stage": name, "artifacts": result.get("artifacts", [])}, source="harness")
        return result

    def _base_record(self) -> RunRecord:
        current = self.config.config_hash
        if self.store.exists(Layout.RUN_RECORD):
            previous = RunRecord.load(self.store)
            if previous.config_hash == current:
                return previous
        return RunRecord(config_hash=current, seeds=list(self.config.experiment.seeds))

    async def run(
        self,
        requested: Optional[Sequence[str]] = None,
        params_by_stage: Optional[Dict[str, Dict[str, Any]]] = None,
    ) -> RunRecord:
        """Run stages in dependency order and write the RunRecord"""
        await self.initialize()
        params_by_stage = params_by_stage or {}
        order = pipeline_order(self.stages, requested)
        keys = self.cache_keys(params_by_stage)
        record = self._base_record()
        record.status = RUN_SUCCESS
        logger.info(f"Running stages: {', '.join(order)}")

        try:
            for name in order:
                try:
                    result = await self.run_stage(name, params_by_stage.get(name), keys[name])
                except StageFailure as failure:
                    record.status = RUN_FAILED
                    record.stages[name] = {"status": STATUS_ERROR, "cache_key": keys[name], "artifacts": failure.artifacts}
                    raise
                record.stages[name] = {
                    "status": result["status"],
                    "cache_key": keys[name],
                    "artifacts": list(result.get("artifacts", [])),
                }
        finally:
            self._finish_record(record)
            await self.event_bus.emit(RUN_COMPLETED, {"status": record.status, "stages": order}, source="harness")
            self.store.write_json(Layout.RUN_RECORD, record.to_dict(), stage="harness")
        return record

    def _finish_record(self, record: RunRecord) -> None:
        produced = {path for entry in record.stages.values() for path in entry.get("artifacts", [])}
        record.artifacts = {path: self.store.digest(path) for path in sorted(produced)}
        record.timings.update(self.event_bus.stage_timings())
        record.finished_at = datetime.now(timezone.utc).isoformat()

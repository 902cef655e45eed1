"""
Base Stage Handler Architecture

Provides the foundation for pipeline stage handlers: parameter definitions,
stage metadata, the per-invocation StageContext and the validate →
pre_execute → execute → post_execute lifecycle.
"""

import logging
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Any, Callable, Dict, List, Optional

from .errors import DistillLabError

if TYPE_CHECKING:
    from .artifacts import ArtifactStore
    from .config_manager import ExperimentConfig
    from .event_bus import EventBus

logger = logging.getLogger(__name__)

STATUS_SUCCESS = "success"
STATUS_ERROR = "error"
STATUS_SKIPPED = "skipped"


class ParameterType(Enum):
    """Supported parameter types for stages"""
    STRING = "string"
    INTEGER = "integer"
    FLOAT = "float"
    BOOLEAN = "boolean"
    OBJECT = "object"
    ARRAY = "array"
    ANY = "any"


_TYPE_CHECKS: Dict[ParameterType, Callable[[Any], bool]] = {
    ParameterType.STRING: lambda v: isinstance(v, str),
    ParameterType.INTEGER: lambda v: isinstance(v, int) and not isinstance(v, bool),
    ParameterType.FLOAT: lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    ParameterType.BOOLEAN: lambda v: isinstance(v, bool),
    ParameterType.OBJECT: lambda v: isinstance(v, dict),
    ParameterType.ARRAY: lambda v: isinstance(v, list),
    ParameterType.ANY: lambda v: True,
}


@dataclass
class ParameterDefinition:
    """Defines a parameter accepted by a stage"""
    name: str
    type: ParameterType
    description: str
    required: bool = True
    default: Any = None
    choices: Optional[List[Any]] = None
    validation: Optional[Callable[[Any], bool]] = None

    def validate(self, value: Any) -> bool:
        if value is None:
            return not self.required
        if not _TYPE_CHECKS[self.type](value):
            return False
        if self.choices is not None:
            items = value if self.type is ParameterType.ARRAY else [value]
            if any(item not in self.choices for item in items):
                return False
        if self.validation:
            return self.validation(value)
        return True


@dataclass
class StageMetadata:
    """Metadata for a pipeline stage"""
    name: str
    description: str
    depends: List[str] = field(default_factory=list)
    config_sections: List[str] = field(default_factory=list)
    parameters: List[ParameterDefinition] = field(default_factory=list)
    version: str = "1.0.0"
    tags: List[str] = field(default_factory=list)


class StageContext:
    """Context passed to stage handlers"""

    def __init__(
        self,
        stage_name: str,
        config: "ExperimentConfig",
        store: "ArtifactStore",
        events: Optional["EventBus"] = None,
        cache_key: Optional[str] = None,
        metadata: Optional[Dict[str, Any]] = None,
    ):
        self.stage_name = stage_name
        self.config = config
        self.store = store
        self.events = events
        self.cache_key = cache_key
        self.metadata = metadata or {}
        self.artifacts: List[str] = []
        self.cached_response: Optional[Dict[str, Any]] = None
        self.start_time = time.monotonic()

    @property
    def seeds(self) -> List[int]:
        return list(self.config.experiment.seeds)

    def produced(self, relpath: str) -> str:
        """Record an artifact written by this stage"""
        if relpath not in self.artifacts:
            self.artifacts.append(relpath)
        return relpath

    def get_execution_time(self) -> float:
        return time.monotonic() - self.start_time


def seeds_parameter() -> ParameterDefinition:
    return ParameterDefinition(
        name="seeds",
        type=ParameterType.ARRAY,
        description="Replicate seeds to process (defaults to experiment.seeds)",
        required=False,
        validation=lambda v: all(isinstance(s, int) and s >= 0 for s in v),
    )


class BaseStageHandler(ABC):
    """
    Base class for all pipeline stages.

    A stage reads artifacts written by the stages it depends on, writes its
    own through the context's ArtifactStore and returns a result dictionary
    with `status`, `artifacts` and a JSON-ready `summary`.
    """

    @property
    @abstractmethod
    def metadata(self) -> StageMetadata:
        pass

    async def validate_parameters(self, params: Dict[str, Any]) -> Dict[str, Any]:
        validated = {}
        errors = []
        for param_def in self.metadata.parameters:
            value = params.get(param_def.name, param_def.default)
            if not param_def.validate(value):
                errors.append(f"Invalid value for parameter '{param_def.name}': {value!r}")
                continue
            if value is not None or param_def.required:
                validated[param_def.name] = value
        unknown = sorted(set(params) - {p.name for p in self.metadata.parameters})
        if unknown:
            errors.append(f"Unknown parameters {unknown}")
        if errors:
            raise ValueError(f"Parameter validation failed: {', '.join(errors)}")
        return validated

    async def pre_execute(self, context: StageContext, params: Dict[str, Any]) -> Dict[str, Any]:
        return params

    @abstractmethod
    async def execute(self, context: StageContext, **params) -> Dict[str, Any]:
        pass

    async def post_execute(self, context: StageContext, result: Dict[str, Any]) -> Dict[str, Any]:
        result.setdefault("status", STATUS_SUCCESS)
        result.setdefault("summary", {})
        result["artifacts"] = list(context.artifacts)
        return result

    async def handle_error(self, context: StageContext, error: Exception) -> Dict[str, Any]:
        if isinstance(error, DistillLabError):
            logger.error(f"Stage '{context.stage_name}' failed: {error}")
        else:
            logger.exception(f"Stage '{context.stage_name}' raised {error.__class__.__name__}")
        return {
            "status": STATUS_ERROR,
            "error": error.__class__.__name__,
            "message": str(error),
            "stage": context.stage_name,
            "artifacts": list(context.artifacts),
        }

    async def __call__(self, context: StageContext, **params) -> Dict[str, Any]:
        """Execute the stage with full lifecycle"""
        try:
            validated = await self.validate_parameters(params)
            processed = await self.pre_execute(context, validated)
            result = await self.execute(context, **processed)
            return await self.post_execute(context, result)
        except Exception as e:
            return await self.handle_error(context, e)


class PerSeedStageHandler(BaseStageHandler):
    """Stage that repeats the same work for every replicate seed"""

    async def execute(self, context: StageContext, seeds: Optional[List[int]] = None, **params) -> Dict[str, Any]:
        summary = {}
        for seed in seeds if seeds is not None else context.seeds:
            summary[str(seed)] = await self.execute_seed(context, seed, **params)
        return {"summary": summary}

    @abstractmethod
    async def execute_seed(self, context: StageContext, seed: int, **params) -> Dict[str, Any]:
        pass

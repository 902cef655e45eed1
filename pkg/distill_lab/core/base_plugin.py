"""
Base Plugin Architecture

Plugins wrap every stage invocation of the harness. A middleware plugin sees
the stage request before the handler runs and the response after it, in
priority order (lower runs first on the way in and last on the way out).
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Dict, List, Optional

from .errors import ConfigValidationError

if TYPE_CHECKING:
    from .base_operation import StageContext

logger = logging.getLogger(__name__)


@dataclass
class PluginMetadata:
    """Metadata for a plugin"""
    name: str
    version: str
    description: str
    dependencies: List[str] = field(default_factory=list)
    capabilities: List[str] = field(default_factory=list)
    config_defaults: Dict[str, Any] = field(default_factory=dict)


class PluginLifecycle(ABC):
    """Lifecycle hooks, called by the registry"""

    async def on_load(self) -> None:
        pass

    async def on_start(self) -> None:
        pass

    async def on_stop(self) -> None:
        pass


class BasePlugin(PluginLifecycle):
    """Base class for all plugins"""

    config_key: str = ""

    def __init__(self, config: Optional[Dict[str, Any]] = None):
        self.config = dict(config or {})
        self._initialized = False

    @property
    @abstractmethod
    def metadata(self) -> PluginMetadata:
        pass

    @property
    def enabled(self) -> bool:
        return bool(self.config.get("enabled", True))

    async def initialize(self) -> None:
        if self._initialized:
            return
        self.validate_config()
        await self.setup()
        self._initialized = True

    def validate_config(self) -> None:
        """Fill defaults and reject keys the plugin does not know"""
        defaults = self.metadata.config_defaults
        unknown = sorted(set(self.config) - set(defaults) - {"enabled"})
        if unknown:
            raise ConfigValidationError(
                [f"plugins.{self.metadata.name}.{key}: unknown key" for key in unknown]
            )
        self.config = {**defaults, **self.config}

    @abstractmethod
    async def setup(self) -> None:
        pass

    async def teardown(self) -> None:
        pass

    def get_capability(self, capability: str) -> bool:
        return capability in self.metadata.capabilities


class MiddlewarePlugin(BasePlugin):
    """Base class for plugins that act as stage middleware"""

    @abstractmethod
    async def process_request(self, stage: str, params: Dict[str, Any], context: "StageContext") -> Dict[str, Any]:
        """
        Inspect or rewrite the stage parameters. Setting
        `context.cached_response` short-circuits the handler.
        """
        return params

    @abstractmethod
    async def process_response(self, stage: str, response: Dict[str, Any], context: "StageContext") -> Dict[str, Any]:
        return response

    @abstractmethod
    def get_priority(self) -> int:
        """Lower executes first"""
        return 100

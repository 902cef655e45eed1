"""
Plugin Registry System

Loads plugin classes with their configuration, resolves plugin
dependencies, runs lifecycle hooks and hands the harness its middleware
chain in priority order.
"""

import importlib
import inspect
import logging
from collections import defaultdict
from typing import Any, Dict, List, Optional, Type, TypeVar

from .base_plugin import BasePlugin, MiddlewarePlugin

logger = logging.getLogger(__name__)

T = TypeVar("T", bound=BasePlugin)


class PluginRegistry:
    """Central registry for the harness plugins"""

    def __init__(self, plugin_config: Optional[Dict[str, Dict[str, Any]]] = None):
        self._plugin_config = plugin_config or {}
        self._plugins: Dict[str, BasePlugin] = {}
        self._plugin_types: Dict[Type[BasePlugin], List[str]] = defaultdict(list)
        self._load_order: List[str] = []
        self._builtin_plugins: List[Type[BasePlugin]] = []
        self._plugin_modules: List[str] = []

    def add_builtin_plugin(self, plugin_class: Type[BasePlugin]) -> None:
        self._builtin_plugins.append(plugin_class)

    def add_plugin_module(self, module_name: str) -> None:
        """Add a module to load plugin classes from"""
        self._plugin_modules.append(module_name)

    async def discover_and_load(self) -> None:
        for plugin_class in self._builtin_plugins:
            self._load_plugin_class(plugin_class)
        for module_name in self._plugin_modules:
            self._discover_plugins_in_module(module_name)

        self._load_order = self._topological_sort(
            {name: plugin.metadata.dependencies for name, plugin in self._plugins.items()}
        )
        for name in self._load_order:
            plugin = self._plugins[name]
            await plugin.initialize()
            await plugin.on_load()
        logger.info(f"Loaded {len(self._plugins)} plugins: {', '.join(self._load_order) or 'none'}")

    def _load_plugin_class(self, plugin_class: Type[BasePlugin]) -> None:
        plugin = plugin_class(self._plugin_config.get(plugin_class.config_key, {}))
        name = plugin.metadata.name
        if name in self._plugins:
            logger.warning(f"Plugin '{name}' already loaded, skipping")
            return
        if not plugin.enabled:
            logger.info(f"Plugin '{name}' disabled by configuration")
            return

        self._plugins[name] = plugin
        for base_class in inspect.getmro(plugin_class):
            if base_class is MiddlewarePlugin:
                self._plugin_types[base_class].append(name)
        logger.debug(f"Loaded plugin: {name} v{plugin.metadata.version}")

    def _discover_plugins_in_module(self, module_name: str) -> None:
        module = importlib.import_module(module_name)
        for _, obj in inspect.getmembers(module, inspect.isclass):
            if issubclass(obj, BasePlugin) and not inspect.isabstract(obj):
                self._load_plugin_class(obj)

    @staticmethod
    def _topological_sort(graph: Dict[str, List[str]]) -> List[str]:
        visited = set()
        order: List[str] = []

        def visit(node: str) -> None:
            if node in visited:
                return
            visited.add(node)
            for dep in graph.get(node, []):
                if dep in graph:
                    visit(dep)
            order.append(node)

        for node in sorted(graph):
            visit(node)
        return order

    def get_plugin(self, name: str) -> Optional[BasePlugin]:
        return self._plugins.get(name)

    def get_plugins_by_type(self, plugin_type: Type[T]) -> List[T]:
        return [self._plugins[name] for name in self._plugin_types.get(plugin_type, []) if name in self._plugins]

    def get_middleware_chain(self) -> List[MiddlewarePlugin]:
        """Middleware sorted by priority"""
        return sorted(self.get_plugins_by_type(MiddlewarePlugin), key=lambda m: m.get_priority())

    async def start_all(self) -> None:
        for name in self._load_order:
            await self._plugins[name].on_start()

    async def stop_all(self) -> None:
        for name in reversed(self._load_order):
            plugin = self._plugins[name]
            try:
                await plugin.on_stop()
                await plugin.teardown()
            except Exception as e:
                logger.error(f"Failed to stop plugin {name}: {e}")

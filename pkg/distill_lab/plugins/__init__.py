"""
Built-in harness middleware.
"""

from typing import List, Type

from ..core.base_plugin import BasePlugin
from .logging_middleware import LoggingMiddlewarePlugin
from .resume_cache import ResumeCachePlugin


def get_builtin_plugins() -> List[Type[BasePlugin]]:
    """Get list of built-in plugin classes"""
    return [
        LoggingMiddlewarePlugin,
        ResumeCachePlugin,
    ]

"""
Logging Middleware Plugin

Logs every stage request and response with timing.
"""

import logging
import time
from typing import Any, Dict

from ..core.base_operation import STATUS_ERROR, StageContext
from ..core.base_plugin import MiddlewarePlugin, PluginMetadata

logger = logging.getLogger(__name__)


class LoggingMiddlewarePlugin(MiddlewarePlugin):
    """Middleware that logs all stage invocations"""

    config_key = "logging"

    @property
    def metadata(self) -> PluginMetadata:
        return PluginMetadata(
            name="logging_middleware",
            version="1.0.0",
            description="Logs stage requests, outcomes and execution time",
            capabilities=["logging", "monitoring"],
            config_defaults={"level": "INFO", "include_params": False},
        )

    async def setup(self) -> None:
        level = self.config["level"]
        logger.setLevel(getattr(logging, level))
        logger.debug(f"Logging middleware initialized with level: {level}")

    async def process_request(self, stage: str, params: Dict[str, Any], context: StageContext) -> Dict[str, Any]:
        context.metadata["request_time"] = time.perf_counter()
        extra = {"stage": stage, "cache_key": context.cache_key}
        if self.config["include_params"]:
            extra["params"] = dict(params)
        logger.info(f"Stage request: {stage}", extra=extra)
        return params

    async def process_response(self, stage: str, response: Dict[str, Any], context: StageContext) -> Dict[str, Any]:
        request_time = context.metadata.pop("request_time", None)
        if request_time is not None:
            response["execution_time_ms"] = int((time.perf_counter() - request_time) * 1000)

        status = response.get("status", "unknown")
        log_method = logger.error if status == STATUS_ERROR else logger.info
        log_method(
            f"Stage response: {stage} - {status} ({response.get('execution_time_ms', '?')} ms, "
            f"{len(response.get('artifacts', []))} artifacts)",
            extra={
                "stage": stage,
                "status": status,
                "execution_time_ms": response.get("execution_time_ms"),
                "error": response.get("message") if status == STATUS_ERROR else None,
            },
        )
        return response

    def get_priority(self) -> int:
        """Runs first so timing covers the other middleware"""
        return 10

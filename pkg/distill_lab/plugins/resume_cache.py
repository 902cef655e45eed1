"""
Resume Cache Plugin

Skips a stage when a previous run left a completion marker with the same
cache key, every artifact the marker lists still exists and each one still
has the manifest digest it had when the stage finished.
"""

import logging
from typing import Any, Dict, Optional

from ..core.artifacts import Layout
from ..core.base_operation import STATUS_SKIPPED, STATUS_SUCCESS, StageContext
from ..core.base_plugin import MiddlewarePlugin, PluginMetadata

logger = logging.getLogger(__name__)


class ResumeCachePlugin(MiddlewarePlugin):
    """Middleware that resumes runs from existing artifacts"""

    config_key = "resume_cache"

    @property
    def metadata(self) -> PluginMetadata:
        return PluginMetadata(
            name="resume_cache",
            version="1.0.0",
            description="Skips stages whose outputs already exist under a matching cache key",
            capabilities=["caching", "resume"],
        )

    async def setup(self) -> None:
        self.hits = 0
        self.misses = 0

    def _marker(self, stage: str, context: StageContext) -> Optional[Dict[str, Any]]:
        relpath = Layout.stage_marker(stage)
        if not context.store.exists(relpath):
            return None
        marker = context.store.read_json(relpath)
        if marker.get("cache_key") != context.cache_key:
            logger.info(f"Stage '{stage}' inputs changed since the last run")
            return None
        missing = [p for p in marker.get("artifacts", []) if not context.store.exists(p)]
        if missing:
            logger.info(f"Stage '{stage}' must rerun: {len(missing)} artifacts missing ({missing[0]} ...)")
            return None
        stale = [p for p, d in marker.get("digests", {}).items() if context.store.digest(p) != d]
        if stale:
            logger.info(f"Stage '{stage}' must rerun: {len(stale)} artifacts rewritten since ({stale[0]} ...)")
            return None
        return marker

    async def process_request(self, stage: str, params: Dict[str, Any], context: StageContext) -> Dict[str, Any]:
        if context.cache_key is None:
            return params
        marker = self._marker(stage, context)
        if marker is None:
            self.misses += 1
            return params
        self.hits += 1
        context.cached_response = {
            "status": STATUS_SKIPPED,
            "artifacts": list(marker["artifacts"]),
            "summary": marker.get("summary", {}),
        }
        return params

    async def process_response(self, stage: str, response: Dict[str, Any], context: StageContext) -> Dict[str, Any]:
        if context.cache_key is None or response.get("status") != STATUS_SUCCESS:
            return response
        artifacts = list(response.get("artifacts", []))
        context.store.write_json(
            Layout.stage_marker(stage),
            {
                "stage": stage,
                "cache_key": context.cache_key,
                "artifacts": artifacts,
                "digests": {p: context.store.digest(p) for p in artifacts},
                "summary": response.get("summary", {}),
            },
            stage=stage,
        )
        return response

    def get_priority(self) -> int:
        return 50

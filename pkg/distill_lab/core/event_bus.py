"""
Event Bus System

Publish/subscribe for harness lifecycle events. Every emitted event is kept
in a bounded history, from which the run record assembles stage timings.
"""

import asyncio
import logging
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Any, Callable, Dict, List, Optional

logger = logging.getLogger(__name__)

STAGE_STARTED = "stage.started"
STAGE_COMPLETED = "stage.completed"
STAGE_SKIPPED = "stage.skipped"
STAGE_FAILED = "stage.failed"
RUN_COMPLETED = "run.completed"


class EventPriority(Enum):
    """Priority levels for event handlers"""
    HIGHEST = 0
    HIGH = 25
    NORMAL = 50
    LOW = 75
    LOWEST = 100


@dataclass
class Event:
    name: str
    data: Dict[str, Any] = field(default_factory=dict)
    source: Optional[str] = None
    timestamp: datetime = field(default_factory=lambda: datetime.now(timezone.utc))
    monotonic: float = field(default_factory=time.perf_counter)


@dataclass
class EventHandler:
    callback: Callable
    priority: EventPriority = EventPriority.NORMAL
    filter: Optional[Callable[[Event], bool]] = None
    once: bool = False

    def matches(self, event: Event) -> bool:
        return self.filter(event) if self.filter else True

    async def invoke(self, event: Event) -> Any:
        if asyncio.iscoroutinefunction(self.callback):
            return await self.callback(event)
        return self.callback(event)


class EventBus:
    """
    Central event bus of a harness run.

    Handlers run in priority order; a failing handler is logged and does not
    stop the others or the pipeline.
    """

    def __init__(self, history_size: int = 1000):
        self._handlers: Dict[str, List[EventHandler]] = {}
        self._history: List[Event] = []
        self._history_size = history_size

    def subscribe(
        self,
        event_name: str,
        handler: Callable,
        priority: EventPriority = EventPriority.NORMAL,
        filter: Optional[Callable[[Event], bool]] = None,
        once: bool = False,
    ) -> Callable:
        handlers = self._handlers.setdefault(event_name, [])
        entry = EventHandler(callback=handler, priority=priority, filter=filter, once=once)
        insert_idx = len(handlers)
        for i, h in enumerate(handlers):
            if h.priority.value > priority.value:
                insert_idx = i
                break
        handlers.insert(insert_idx, entry)
        logger.debug(f"Subscribed handler to event '{event_name}' with priority {priority.name}")
        return handler

    def unsubscribe(self, event_name: str, handler: Callable) -> bool:
        handlers = self._handlers.get(event_name, [])
        for i, h in enumerate(handlers):
            if h.callback == handler:
                handlers.pop(i)
                return True
        return False

    async def emit(
        self,
        event_name: str,
        data: Optional[Dict[str, Any]] = None,
        source: Optional[str] = None,
    ) -> List[Any]:
        event = Event(name=event_name, data=data or {}, source=source)
        self._add_to_history(event)

        results = []
        spent = []
        for handler in list(self._handlers.get(event_name, [])):
            if not handler.matches(event):
                continue
            try:
                results.append(await handler.invoke(event))
            except Exception as e:
                logger.error(f"Error in event handler for '{event_name}': {e}")
            if handler.once:
                spent.append(handler)
        for handler in spent:
            self._handlers[event_name].remove(handler)
        return results

    def _add_to_history(self, event: Event) -> None:
        self._history.append(event)
        if len(self._history) > self._history_size:
            self._history.pop(0)

    def get_history(self, event_name: Optional[str] = None, limit: Optional[int] = None) -> List[Event]:
        events = self._history
        if event_name:
            events = [e for e in events if e.name == event_name]
        if limit:
            events = events[-limit:]
        return list(events)

    def stage_timings(self) -> Dict[str, Dict[str, Any]]:
        """Per-stage start time, duration and final status from the history"""
        timings: Dict[str, Dict[str, Any]] = {}
        started: Dict[str, Event] = {}
        for event in self._history:
            stage = event.data.get("stage")
            if stage is None:
                continue
            if event.name == STAGE_STARTED:
                started[stage] = event
            elif event.name in (STAGE_COMPLETED, STAGE_SKIPPED, STAGE_FAILED):
                begin = started.get(stage, event)
                timings[stage] = {
                    "started_at": begin.timestamp.isoformat(),
                    "seconds": round(event.monotonic - begin.monotonic, 6),
                    "status": event.name.split(".", 1)[1],
                }
        return timings

    def on(self, event_name: str, **kwargs):
        """Decorator for subscribing to events"""
        def decorator(func: Callable) -> Callable:
            self.subscribe(event_name, func, **kwargs)
            return func
        return decorator

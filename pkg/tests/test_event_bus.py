from distill_lab.core.event_bus import (
    STAGE_COMPLETED,
    STAGE_FAILED,
    STAGE_STARTED,
    EventBus,
    EventPriority,
)

from .conftest import run


def test_handlers_run_in_priority_order():
    bus = EventBus()
    calls = []
    bus.subscribe("x", lambda e: calls.append("low"), priority=EventPriority.LOW)
    bus.subscribe("x", lambda e: calls.append("high"), priority=EventPriority.HIGH)

    async def normal(event):
        calls.append("normal")

    bus.subscribe("x", normal)
    run(bus.emit("x"))
    assert calls == ["high", "normal", "low"]


def test_once_filter_and_unsubscribe():
    bus = EventBus()
    seen = []
    bus.subscribe("x", lambda e: seen.append(("once", e.data["n"])), once=True)
    bus.subscribe("x", lambda e: seen.append(("even", e.data["n"])), filter=lambda e: e.data["n"] % 2 == 0)
    handler = bus.on("x")(lambda e: seen.append(("all", e.data["n"])))

    run(bus.emit("x", {"n": 1}))
    assert bus.unsubscribe("x", handler)
    run(bus.emit("x", {"n": 2}))
    assert seen == [("once", 1), ("all", 1), ("even", 2)]


def test_failing_handler_does_not_stop_others():
    bus = EventBus()
    seen = []

    def broken(event):
        raise RuntimeError("boom")

    bus.subscribe("x", broken, priority=EventPriority.HIGHEST)
    bus.subscribe("x", lambda e: seen.append(e.name))
    results = run(bus.emit("x"))
    assert seen == ["x"]
    assert len(results) == 1


def test_history_and_stage_timings():
    bus = EventBus(history_size=3)

    async def scenario():
        await bus.emit(STAGE_STARTED, {"stage": "generate"})
        await bus.emit(STAGE_COMPLETED, {"stage": "generate"})
        await bus.emit(STAGE_STARTED, {"stage": "eval"})
        await bus.emit(STAGE_FAILED, {"stage": "eval"})

    run(scenario())
    assert [e.name for e in bus.get_history()] == [STAGE_COMPLETED, STAGE_STARTED, STAGE_FAILED]
    assert len(bus.get_history(STAGE_STARTED, limit=5)) == 1

    timings = bus.stage_timings()
    assert timings["eval"]["status"] == "failed"
    assert timings["eval"]["seconds"] >= 0
    assert timings["generate"]["status"] == "completed"

import pytest

from distill_lab.core.base_operation import STATUS_SKIPPED, STATUS_SUCCESS, StageContext
from distill_lab.core.errors import ConfigValidationError
from distill_lab.core.plugin_registry import PluginRegistry
from distill_lab.plugins import get_builtin_plugins
from distill_lab.plugins.logging_middleware import LoggingMiddlewarePlugin
from distill_lab.plugins.resume_cache import ResumeCachePlugin

from .conftest import run


def load_registry(plugin_config=None):
    registry = PluginRegistry(plugin_config)
    for plugin_class in get_builtin_plugins():
        registry.add_builtin_plugin(plugin_class)
    run(registry.discover_and_load())
    return registry


def test_middleware_chain_in_priority_order():
    chain = load_registry().get_middleware_chain()
    assert [type(m) for m in chain] == [LoggingMiddlewarePlugin, ResumeCachePlugin]


def test_disabled_plugin_is_not_loaded():
    registry = load_registry({"resume_cache": {"enabled": False}})
    assert registry.get_plugin("resume_cache") is None
    assert registry.get_plugin("logging_middleware") is not None


def test_unknown_plugin_key_rejected():
    with pytest.raises(ConfigValidationError, match="plugins.logging_middleware.colour"):
        load_registry({"logging": {"colour": "red"}})


def test_module_discovery_does_not_duplicate():
    registry = PluginRegistry()
    registry.add_builtin_plugin(ResumeCachePlugin)
    registry.add_plugin_module("distill_lab.plugins.resume_cache")
    run(registry.discover_and_load())
    assert len(registry.get_middleware_chain()) == 1


def test_resume_cache_marker_round_trip(store):
    plugin = ResumeCachePlugin()
    run(plugin.initialize())

    context = StageContext("generate", None, store, cache_key="k1")
    run(plugin.process_request("generate", {}, context))
    assert context.cached_response is None and plugin.misses == 1

    store.write_text("data/out.txt", "x", stage="generate")
    response = {"status": STATUS_SUCCESS, "artifacts": ["data/out.txt"], "summary": {"n": 1}}
    run(plugin.process_response("generate", response, context))

    again = StageContext("generate", None, store, cache_key="k1")
    run(plugin.process_request("generate", {}, again))
    assert again.cached_response == {"status": STATUS_SKIPPED, "artifacts": ["data/out.txt"], "summary": {"n": 1}}
    assert plugin.hits == 1

    changed = StageContext("generate", None, store, cache_key="k2")
    run(plugin.process_request("generate", {}, changed))
    assert changed.cached_response is None

    store.remove("data/out.txt")
    missing = StageContext("generate", None, store, cache_key="k1")
    run(plugin.process_request("generate", {}, missing))
    assert missing.cached_response is None


def test_logging_middleware_times_response(store):
    plugin = LoggingMiddlewarePlugin({"include_params": True})
    run(plugin.initialize())
    context = StageContext("eval", None, store)
    params = run(plugin.process_request("eval", {"seeds": [0]}, context))
    assert params == {"seeds": [0]}
    response = run(plugin.process_response("eval", {"status": STATUS_SUCCESS, "artifacts": []}, context))
    assert response["execution_time_ms"] >= 0


def test_resume_cache_reruns_after_artifact_rewritten(store):
    plugin = ResumeCachePlugin()
    run(plugin.initialize())

    context = StageContext("figures", None, store, cache_key="k1")
    store.write_text("figures/a.tsv", "x\t1\n", stage="figures")
    store.write_text("figures/b.tsv", "y\t2\n", stage="figures")
    response = {"status": STATUS_SUCCESS, "artifacts": ["figures/a.tsv", "figures/b.tsv"], "summary": {}}
    run(plugin.process_response("figures", response, context))

    marker = store.read_json("stages/figures.json")
    assert marker["digests"] == {p: store.digest(p) for p in response["artifacts"]}

    store.write_text("figures/b.tsv", "y\t3\n", stage="eval")
    again = StageContext("figures", None, store, cache_key="k1")
    run(plugin.process_request("figures", {}, again))
    assert again.cached_response is None
    assert plugin.misses == 1 and plugin.hits == 0

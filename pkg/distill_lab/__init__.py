"""
distill-lab - Distillation Experiments on a Markov-Chain Sandbox

This package reproduces, at desk scale, when soft-label distillation helps
or hurts pretraining:
- Entropy-stratified bigram sandbox with trigger → copy induction structure
- Tabular MLE vs distillation sample-complexity checks
- A numpy micro transformer with exact gradients, Adam and a cosine schedule
- Tempered, routed and top-k sparse distillation objectives
- pass@k analysis and sampled pass@k of trained models
- A resumable, seeded stage pipeline that emits plot-data tables
"""

__version__ = "0.1.0"
__all__ = [
    "ExperimentHarness",
    "RunRecord",
    "ExperimentConfig",
    "load_experiment_config",
    "ArtifactStore",
    "EventBus",
    "PluginRegistry",
    "BasePlugin",
    "BaseStageHandler",
]

from .core.artifacts import ArtifactStore
from .core.base_operation import BaseStageHandler
from .core.base_plugin import BasePlugin
from .core.config_manager import ExperimentConfig, load_experiment_config
from .core.event_bus import EventBus
from .core.harness import ExperimentHarness, RunRecord
from .core.plugin_registry import PluginRegistry

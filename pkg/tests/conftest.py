"""Shared fixtures"""

import asyncio
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import pytest
import yaml

from distill_lab.core.artifacts import ArtifactStore
from distill_lab.core.config_manager import ExperimentConfig, load_experiment_config
from distill_lab.sandbox.markov_gen import EntropyClass, TransitionMatrix, build_matrix, choose_triggers

MIXED_PLAN_16 = [EntropyClass.LOW] * 5 + [EntropyClass.MEDIUM] * 5 + [EntropyClass.HIGH] * 6

SMOKE: Dict[str, Any] = {
    "experiment": {"name": "test", "seeds": [0]},
    "data": {
        "k": 16,
        "length": 16,
        "triggers": 5,
        "teacher_sequences": 200,
        "student_sequences": 100,
        "eval_sequences": 100,
    },
    "teacher": {"d_model": 16, "n_layers": 1, "n_heads": 2},
    "student": {"d_model": 8, "n_layers": 1, "n_heads": 2},
    "students": [
        {"name": "ce", "alpha": 0.0},
        {"name": "kd", "alpha": 0.5, "temperature": 2.0},
        {"name": "kd_routed", "alpha": 0.5, "temperature": 2.0, "routing_fraction": 0.15},
    ],
    "training": {"batch_size": 32, "lr": 0.003, "teacher_epochs": 1, "student_epochs": 1, "checkpoints": 2, "log_every": 0},
    "eval": {"batch_size": 64},
    "passk": {"curve_ks": [1, 2, 4], "ks": [1, 2, 4], "n": 4, "temperature_max": 1.0, "temperature_step": 0.5, "max_items": 8},
    "complexity": {"k": 8, "p_values": [8, 1], "sample_grid": [32, 128], "trials": 3, "coupon_trials": 200},
}


def run(coro):
    """Drive a coroutine to completion"""
    return asyncio.run(coro)


def smoke_config(out_dir: Path, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    tree = {**SMOKE, "experiment": {**SMOKE["experiment"], "out_dir": str(out_dir)}}
    merged = dict(tree)
    for key, value in (overrides or {}).items():
        merged[key] = {**merged[key], **value} if isinstance(value, dict) and key in merged else value
    return run(load_experiment_config(None, merged, environ={}))


def write_config(path: Path, tree: Dict[str, Any]) -> Path:
    path.write_text(yaml.safe_dump(tree))
    return path


@pytest.fixture
def store(tmp_path) -> ArtifactStore:
    return ArtifactStore(tmp_path / "run")


@pytest.fixture
def mixed_matrix() -> TransitionMatrix:
    return build_matrix(16, MIXED_PLAN_16, seed=7)


@pytest.fixture
def triggers():
    return choose_triggers(16, 5, seed=3)


@pytest.fixture
def cycle_matrix() -> TransitionMatrix:
    """One-hot chain i -> i+1 (mod 5)"""
    k = 5
    rows = np.zeros((k, k))
    rows[np.arange(k), (np.arange(k) + 1) % k] = 1.0
    return TransitionMatrix.from_rows(rows)


def check_gradients(params, tokens, objective, samples: Optional[int] = None, eps: float = 1e-4, seed: int = 0) -> None:
    """Compare backward() against central differences on every entry, or `samples` random entries per tensor"""
    from distill_lab.sandbox.transformer import backward, forward

    _, grads = backward(params, tokens, objective)
    rng = np.random.default_rng(seed)
    for name in params.names():
        tensor = params.tensors[name]
        if samples is None:
            entries = range(tensor.size)
        else:
            entries = rng.choice(tensor.size, size=min(samples, tensor.size), replace=False)
        for flat in entries:
            idx = np.unravel_index(flat, tensor.shape)
            plus, minus = params.copy(), params.copy()
            plus.tensors[name][idx] += eps
            minus.tensors[name][idx] -= eps
            numeric = (objective(forward(plus, tokens))[0] - objective(forward(minus, tokens))[0]) / (2 * eps)
            analytic = grads[name][idx]
            assert abs(analytic - numeric) < 1e-4 * max(abs(analytic), abs(numeric), 1e-3), (name, idx, analytic, numeric)

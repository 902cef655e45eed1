"""
Adam with a cosine learning-rate schedule

Functional update over name → array mappings: adam_step returns fresh
parameter and state objects and never mutates its inputs.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, Tuple

import numpy as np

from ..core.errors import InvariantViolation, NonFiniteGradientError

Tensors = Dict[str, np.ndarray]


def cosine_lr(base_lr: float, progress: float) -> float:
    """base · 0.5 · (1 + cos(π · progress)), progress clipped to [0, 1]"""
    progress = min(max(progress, 0.0), 1.0)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class AdamState:
    """Step count, moment accumulators and schedule settings"""
    base_lr: float
    total_steps: int
    warmup_steps: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Tensors = field(default_factory=dict)
    v: Tensors = field(default_factory=dict)

    @classmethod
    def create(cls, params: Tensors, base_lr: float, total_steps: int, warmup_steps: int = 0, **kwargs) -> "AdamState":
        if base_lr < 0:
            raise InvariantViolation(f"base_lr must be >= 0, got {base_lr}")
        if total_steps < 1:
            raise InvariantViolation(f"total_steps must be >= 1, got {total_steps}")
        return cls(
            base_lr=base_lr,
            total_steps=total_steps,
            warmup_steps=warmup_steps,
            m={name: np.zeros_like(p) for name, p in params.items()},
            v={name: np.zeros_like(p) for name, p in params.items()},
            **kwargs,
        )

    def learning_rate(self, progress: float) -> float:
        """Cosine rate at `progress`, scaled by linear warmup for the next step"""
        lr = cosine_lr(self.base_lr, progress)
        if self.warmup_steps > 0:
            lr *= min(1.0, (self.step + 1) / self.warmup_steps)
        return lr

    def header(self) -> Dict[str, Any]:
        return {
            "base_lr": self.base_lr,
            "total_steps": self.total_steps,
            "warmup_steps": self.warmup_steps,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "step": self.step,
        }

    @classmethod
    def from_header(cls, header: Dict[str, Any], m: Tensors, v: Tensors) -> "AdamState":
        return cls(m=m, v=v, **header)


def adam_step(params: Tensors, grads: Tensors, state: AdamState, progress: float) -> Tuple[Tensors, AdamState]:
    """
    One bias-corrected Adam update at schedule position `progress` ∈ [0, 1].

    Raises NonFiniteGradientError, leaving params and state untouched, when
    any gradient holds NaN or Inf.
    """
    if set(grads) != set(params) or set(state.m) != set(params):
        raise InvariantViolation("Parameter, gradient and moment names must match")

    bad = [name for name, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise NonFiniteGradientError(bad, state.step + 1)

    lr = state.learning_rate(progress)
    step = state.step + 1
    bias1 = 1.0 - state.beta1 ** step
    bias2 = 1.0 - state.beta2 ** step

    new_params: Tensors = {}
    new_m: Tensors = {}
    new_v: Tensors = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise InvariantViolation(f"Gradient for {name} has shape {g.shape}, expected {p.shape}")
        m = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        new_params[name] = p - lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
        new_m[name] = m
        new_v[name] = v

    new_state = AdamState(
        base_lr=state.base_lr,
        total_steps=state.total_steps,
        warmup_steps=state.warmup_steps,
        beta1=state.beta1,
        beta2=state.beta2,
        eps=state.eps,
        step=step,
        m=new_m,
        v=new_v,
    )
    return new_params, new_state

"""
AdamW, cosine learning-rate schedules and global-norm gradient clipping

Parameters and gradients are dicts of named float64 arrays.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from ..types.errors import ShapeMismatchError

Arrays = Dict[str, np.ndarray]


@dataclass
class OptimizerState:
    """AdamW moments and step counter"""
    m: Arrays = field(default_factory=dict)
    v: Arrays = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Arrays, **kwargs) -> "OptimizerState":
        return cls(
            m={k: np.zeros_like(a) for k, a in params.items()},
            v={k: np.zeros_like(a) for k, a in params.items()},
            **kwargs,
        )


def adamw_step(state: OptimizerState, params: Arrays, grads: Arrays, lr: float,
               weight_decay: float = 0.0) -> Tuple[OptimizerState, Arrays]:
    """One AdamW update with decoupled weight decay; inputs are not mutated"""
    if set(grads) != set(params):
        raise ShapeMismatchError("adamw_step: gradient and parameter names differ")
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** step
    bias2 = 1.0 - b2 ** step
    new_m, new_v, new_params = {}, {}, {}
    for name, theta in params.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ShapeMismatchError(f"adamw_step: {name} gradient {g.shape} vs parameter {theta.shape}")
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        update = (m / bias1) / (np.sqrt(v / bias2) + state.eps)
        decayed = theta - lr * weight_decay * theta
        new_params[name] = decayed - lr * update
        new_m[name], new_v[name] = m, v
    return OptimizerState(new_m, new_v, step, b1, b2, state.eps), new_params


def global_norm(grads: Arrays) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_gradients(grads: Arrays, max_norm: float) -> Tuple[Arrays, float]:
    """Scale all gradients by max_norm / norm when the global L2 norm exceeds max_norm"""
    if max_norm <= 0:
        raise ValueError("clip_gradients: max_norm must be positive")
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads, norm
    factor = max_norm / norm
    return {k: g * factor for k, g in grads.items()}, norm


class CosineSchedule:
    """Cosine annealing from base_lr to 0, optionally restarted every period steps"""

    def __init__(self, base_lr: float, total_steps: int, restart_period: Optional[int] = None):
        self.base_lr = base_lr
        self.total_steps = max(total_steps, 1)
        self.restart_period = restart_period

    def lr(self, step: int) -> float:
        if self.restart_period:
            position, span = step % self.restart_period, self.restart_period
        else:
            position, span = min(step, self.total_steps), self.total_steps
        return self.base_lr * 0.5 * (1.0 + math.cos(math.pi * position / span))

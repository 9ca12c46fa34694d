import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Optional

import numpy as np

from .registry import ParamRegistry


@dataclass
class SGDState:
    """Momentum buffers (zero-initialized on first use) and hyperparameters"""

    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    buffers: Dict[str, np.ndarray] = field(default_factory=dict)


def sgd_step(
    registry: ParamRegistry,
    grads: Mapping[str, np.ndarray],
    state: SGDState,
    groups: Optional[Iterable[str]] = None,
    names: Optional[Iterable[str]] = None,
) -> None:
    """
    One SGD-with-momentum update, in registry order.

    v <- momentum * v + g + weight_decay * p
    p <- p - lr * v

    A selected parameter without a gradient is updated with g = 0.

    :param registry: Parameters, updated in place
    :param grads: name -> gradient
    :param state: Optimizer state
    :param groups: Group tags to update (all when None)
    :param names: Further restricts the update to these parameter names
    """
    selected = registry.names(groups)
    if names is not None:
        allowed = set(names)
        selected = [n for n in selected if n in allowed]
    for name in selected:
        p = registry[name]
        g = grads.get(name)
        g = np.zeros_like(p) if g is None else np.asarray(g, dtype=p.dtype)
        v = state.buffers.get(name)
        if v is None:
            v = np.zeros_like(p)
        v = state.momentum * v + g
        if state.weight_decay:
            v = v + state.weight_decay * p
        v = v.astype(p.dtype)
        state.buffers[name] = v
        registry[name] = p - state.lr * v


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """Cosine decay from base_lr at step 0 towards 0 at total_steps"""
    if total_steps <= 0:
        return base_lr
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * min(step, total_steps) / total_steps))

"""SGD with momentum and decoupled-from-nothing weight decay.

Update rule, fixed and relied on by the training tests:

    v <- momentum * v + grad + weight_decay * param
    param <- param - lr * v

Weight decay is added to the raw gradient before the momentum accumulation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .tensor import Tensor


@dataclass
class OptimState:
    lr: float
    momentum: float = 0.9
    weight_decay: float = 0.0
    velocity: list[np.ndarray] = field(default_factory=list)


def make_sgd(params: list[Tensor], lr: float, momentum: float = 0.9,
             weight_decay: float = 0.0) -> OptimState:
    state = OptimState(lr=lr, momentum=momentum, weight_decay=weight_decay)
    state.velocity = [np.zeros_like(p.data) for p in params]
    return state


def sgd_step(params: list[Tensor], grads, state: OptimState) -> list[Tensor]:
    """One in-place SGD update; a None grad is treated as zero."""
    if len(params) != len(state.velocity):
        raise ShapeError(
            f"optimizer tracks {len(state.velocity)} params, got {len(params)}"
        )
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ShapeError(
                f"grad shape {g.shape} != param shape {p.data.shape} (param {i})"
            )
        v = state.velocity[i]
        v *= state.momentum
        v += g
        if state.weight_decay:
            v += state.weight_decay * p.data
        p.data -= state.lr * v
    return params


def zero_grads(params: list[Tensor]) -> None:
    for p in params:
        p.grad = None

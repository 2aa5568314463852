"""
Adam optimizer for the PIP Restoration Toolkit
"""

from dataclasses import dataclass, field
from typing import Dict, Sequence

import numpy as np

from tensor import Parameter
from utils.error_handler import DataError, ShapeError


@dataclass
class AdamState:
    """Per-parameter moments keyed by parameter name, plus the shared step counter."""
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def validate(self) -> bool:
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        return True


def adam_step(params: Sequence[Parameter], state: AdamState) -> None:
    """
    Apply one bias-corrected Adam update to every parameter, then clear grads.

    Raises DataError naming the first parameter without a gradient; nothing
    is updated in that case.
    """
    for param in params:
        if param.grad is None:
            raise DataError(f"parameter '{param.name}' has no gradient; run backward() before adam_step")

    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t

    for param in params:
        grad = param.grad
        m = state.first_moment.get(param.name)
        v = state.second_moment.get(param.name)
        if m is None:
            m = state.first_moment[param.name] = np.zeros_like(param.data)
            v = state.second_moment[param.name] = np.zeros_like(param.data)
        elif m.shape != param.shape:
            raise ShapeError(f"moment shape {m.shape} does not match parameter '{param.name}' shape {param.shape}")

        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad

        update = state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        param.data -= update.astype(param.dtype, copy=False)
        param.grad = None

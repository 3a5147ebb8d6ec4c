"""Adam with bias-corrected moments."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float, step_index: int,
              beta1: float = BETA1, beta2: float = BETA2, eps: float = EPSILON):
    """One update. ``step_index`` is 1-based and drives the bias correction.

    Returns new parameter arrays and the updated state; inputs are not mutated.
    """
    if step_index < 1:
        raise ValueError("step_index is 1-based")
    new_params, m_new, v_new = {}, {}, {}
    for name, theta in params.items():
        g = grads[name]
        if np.shape(g) != np.shape(theta):
            raise DimensionError(f"{name}: gradient shape {np.shape(g)} != parameter shape {np.shape(theta)}")
        m = state.m.get(name, 0.0)
        v = state.v.get(name, 0.0)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        m_hat = m / (1.0 - beta1 ** step_index)
        v_hat = v / (1.0 - beta2 ** step_index)
        new_params[name] = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
        m_new[name], v_new[name] = m, v
    return new_params, AdamState(m_new, v_new, step_index)


class Adam:
    """Stateful wrapper that updates a model's parameters in place."""

    def __init__(self, lr: float):
        self.lr = lr
        self.state = AdamState()

    def step(self, model, grads: dict) -> None:
        new, self.state = adam_step(model.params, grads, self.state, self.lr, self.state.step + 1)
        model.set_params(new)

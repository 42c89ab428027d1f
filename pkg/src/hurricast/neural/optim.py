"""Adam optimizer with bias correction."""

from __future__ import annotations

import numpy as np

from ..errors import NumericalError
from .layers import Parameter


class AdamState:
    """First/second moment accumulators for one parameter set."""

    def __init__(self, shapes: list[tuple[int, ...]]):
        self.step = 0
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]


def adam_step(values: list[np.ndarray], grads: list[np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> list[np.ndarray]:
    """One Adam update; returns the new values and advances the state in place."""
    state.step += 1
    t = state.step
    out = []
    for i, (value, grad) in enumerate(zip(values, grads)):
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f"non-finite gradient at parameter index {i} (step {t})")
        state.m[i] = beta1 * state.m[i] + (1 - beta1) * grad
        state.v[i] = beta2 * state.v[i] + (1 - beta2) * grad ** 2
        m_hat = state.m[i] / (1 - beta1 ** t)
        v_hat = state.v[i] / (1 - beta2 ** t)
        out.append(value - lr * m_hat / (np.sqrt(v_hat) + eps))
    return out


class Adam:
    """Adam bound to a list of Parameters."""

    def __init__(self, params: list[Parameter], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state = AdamState([p.value.shape for p in params])

    def zero_grads(self) -> None:
        for p in self.params:
            p.grad[...] = 0.0

    def step(self) -> None:
        new = adam_step([p.value for p in self.params], [p.grad for p in self.params],
                        self.state, self.lr, self.beta1, self.beta2, self.eps)
        for p, value in zip(self.params, new):
            p.value[...] = value

"""Adam optimizer with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Parameter


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class Adam:
    def __init__(self, params: list[Parameter], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.states = [AdamState(m=np.zeros_like(p.data), v=np.zeros_like(p.data),
                                 lr=lr, beta1=beta1, beta2=beta2, eps=eps)
                       for p in self.params]

    def step(self):
        for p, s in zip(self.params, self.states):
            adam_step(p, s)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def adam_step(param: Parameter, state: AdamState):
    """One bias-corrected Adam update; the caller zeroes gradients afterwards."""
    g = param.grad
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    param.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)

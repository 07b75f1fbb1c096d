"""AdamW with decoupled weight decay.

State follows the usual first/second moment recursion with bias
correction; weight decay is applied directly to the parameter value,
separately from the moment update. The step is a pure function of
(value, grad, state): how the gradient was produced does not matter.
"""

from __future__ import annotations

import numpy as np

from .tensor import Parameter


class AdamW:
    def __init__(self, params, lr: float = 1e-5, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01):
        if isinstance(params, dict):
            params = params.values()
        self.params = [p for p in params if isinstance(p, Parameter)]
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for p, m, v in zip(self.params, self._m, self._v):
            if not p.trainable:
                continue
            g = p.grad
            if self.weight_decay != 0.0:
                p.data -= self.lr * self.weight_decay * p.data
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def adamw_step(params, state: AdamW):
    """Single optimizer step over ``params`` using ``state``."""
    state.step()

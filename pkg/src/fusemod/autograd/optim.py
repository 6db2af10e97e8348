"""Adam with optional coupled L2 on selected parameters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass
class Param:
    """Named leaf tensor; weight_decay marks conv/deconv weights for L2."""

    name: str
    tensor: Tensor
    weight_decay: bool = False

    @property
    def data(self):
        return self.tensor.data


class Adam:
    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8, l2=5e-4):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.l2 = l2
        self.step_count = 0
        self.m = {p.name: np.zeros_like(p.tensor.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.tensor.data) for p in self.params}

    def zero_grad(self):
        for p in self.params:
            p.tensor.grad = None

    def step(self):
        """One Adam update; parameters without a gradient are left alone."""
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for p in self.params:
            g = p.tensor.grad
            if g is None:
                continue
            if p.weight_decay and self.l2:
                g = g + self.l2 * p.tensor.data  # coupled decay enters the moments
            m = self.m[p.name] = self.beta1 * self.m[p.name] + (1.0 - self.beta1) * g
            v = self.v[p.name] = self.beta2 * self.v[p.name] + (1.0 - self.beta2) * (g * g)
            p.tensor.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

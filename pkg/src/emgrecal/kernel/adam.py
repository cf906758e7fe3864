"""Adam optimizer over named Parameter objects."""

import numpy as np


class Adam:
    """Bias-corrected Adam.

    Parameters are updated in the order given at construction, which fixes
    the floating-point evaluation order and makes trajectories reproducible.
    Non-trainable parameters are never touched, whatever their gradient.
    """

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {
            p.name: np.zeros_like(p.value) for p in self.params if p.trainable
        }
        self.v = {
            p.name: np.zeros_like(p.value) for p in self.params if p.trainable
        }

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for p in self.params:
            if not p.trainable:
                continue
            g = p.grad
            m = self.m[p.name]
            v = self.v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.value -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_tensors(self):
        """Moment tensors keyed for checkpointing."""
        out = {}
        for name in self.m:
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

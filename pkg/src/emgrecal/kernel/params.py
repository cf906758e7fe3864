"""Learnable parameters and per-session batch-norm statistic banks."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Parameter:
    """A named learnable tensor with its gradient accumulator.

    Non-trainable parameters still receive gradients during backprop (the
    math does not care) but the optimizer must never update them.
    """

    name: str
    value: np.ndarray
    grad: np.ndarray = None
    trainable: bool = True

    def __post_init__(self):
        self.value = np.asarray(self.value)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape:
            raise ValueError(
                f"parameter {self.name}: grad shape {self.grad.shape} "
                f"!= value shape {self.value.shape}"
            )

    def zero_grad(self):
        self.grad[...] = 0


@dataclass
class BnBank:
    """Running mean/variance for one normalization layer in one session."""

    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def fresh(cls, num_features, dtype):
        return cls(
            mean=np.zeros(num_features, dtype=dtype),
            var=np.ones(num_features, dtype=dtype),
        )

    def copy(self):
        return BnBank(mean=self.mean.copy(), var=self.var.copy())

"""Minimal reverse-mode kernel: the op set the TCN stack needs, plus Adam.

Hot convolution kernels live in a compiled extension when available; see
``backend.backend_name()`` for which implementation was selected at import.
"""

from .adam import Adam
from .backend import backend_name
from .checkpoint import (
    CheckpointError,
    config_hash,
    load_checkpoint,
    save_checkpoint,
)
from .faults import NumericalFault, check_finite, enable_finite_checks
from .ops import (
    batch_norm_backward,
    batch_norm_forward,
    clamp_coefficient,
    conv1d_causal_backward,
    conv1d_causal_forward,
    dropout_backward,
    dropout_forward,
    global_avg_pool_backward,
    global_avg_pool_forward,
    gradient_reversal_backward,
    gradient_reversal_forward,
    leaky_relu_backward,
    leaky_relu_forward,
    linear_backward,
    linear_forward,
    softmax,
    softmax_cross_entropy,
)
from .params import BnBank, Parameter

__all__ = [
    "Adam",
    "BnBank",
    "CheckpointError",
    "NumericalFault",
    "Parameter",
    "backend_name",
    "batch_norm_backward",
    "batch_norm_forward",
    "check_finite",
    "clamp_coefficient",
    "config_hash",
    "conv1d_causal_backward",
    "conv1d_causal_forward",
    "dropout_backward",
    "dropout_forward",
    "enable_finite_checks",
    "global_avg_pool_backward",
    "global_avg_pool_forward",
    "gradient_reversal_backward",
    "gradient_reversal_forward",
    "leaky_relu_backward",
    "leaky_relu_forward",
    "linear_backward",
    "linear_forward",
    "load_checkpoint",
    "save_checkpoint",
    "softmax",
    "softmax_cross_entropy",
]

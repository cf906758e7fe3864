"""Numerical fault detection.

Training always checks the loss; per-op output checks are behind a module
flag because they cost a full pass over every activation.
"""

import numpy as np


class NumericalFault(RuntimeError):
    """A non-finite value (NaN/Inf) appeared where finite math was required."""


FINITE_CHECKS = False


def enable_finite_checks(on=True):
    """Toggle per-op finiteness checking (slow; meant for tests/debugging)."""
    global FINITE_CHECKS
    FINITE_CHECKS = on


def check_finite(arr, context):
    if not np.all(np.isfinite(arr)):
        raise NumericalFault(f"non-finite values in {context}")


def maybe_check_finite(arr, context):
    if FINITE_CHECKS:
        check_finite(arr, context)

"""Convolution backend selection.

The compiled extension is preferred when present; otherwise the numpy
fallback is used.  Both expose the same three kernels and are numerically
interchangeable (identical math, different summation order).
"""

from . import _convnp

try:
    from . import _convcy as _impl
except ImportError:  # extension not built on this install
    _impl = _convnp

numpy_impl = _convnp
active_impl = _impl


def backend_name():
    """Name of the convolution backend selected at import ('cython' or 'numpy')."""
    return active_impl.BACKEND_NAME

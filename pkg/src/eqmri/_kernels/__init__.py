"""Convolution kernel backend selection.

Two interchangeable implementations of the same small kernel API exist: a
Cython extension (built at install time when a compiler is available) and a
pure NumPy fallback. The default picks the extension when present. Set
``EQMRI_KERNELS=python`` or ``EQMRI_KERNELS=compiled`` to force a backend;
forcing ``compiled`` raises if the extension was not built.

Both backends expose ``conv2d``, ``conv2d_input_grad``, ``conv2d_weight_grad``
and a ``BACKEND`` name. Results agree to floating-point accumulation order.
"""

import os

from . import _convpy


def _load_backend():
    choice = os.environ.get("EQMRI_KERNELS", "auto").strip().lower()
    if choice not in ("auto", "compiled", "python"):
        raise ValueError(f"EQMRI_KERNELS must be auto, compiled or python, got {choice!r}")
    if choice == "python":
        return _convpy
    try:
        from . import _convx
    except ImportError:
        if choice == "compiled":
            raise ImportError(
                "EQMRI_KERNELS=compiled but the extension is not built; "
                "reinstall with a C compiler available"
            ) from None
        return _convpy
    return _convx


_impl = _load_backend()

BACKEND = _impl.BACKEND
conv2d = _impl.conv2d
conv2d_input_grad = _impl.conv2d_input_grad
conv2d_weight_grad = _impl.conv2d_weight_grad

__all__ = ["BACKEND", "conv2d", "conv2d_input_grad", "conv2d_weight_grad"]

"""Kernel backend selected at import.

The compiled extension is preferred; set ``HWNAS_FORCE_PYTHON=1`` to use
the NumPy fallback.  ``BACKEND`` names the active one.
"""
import os

from . import _fallback

if os.environ.get("HWNAS_FORCE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _fallback

BACKEND = "cython" if _impl is not _fallback else "python"

conv2d_forward = _impl.conv2d_forward
conv2d_backward_input = _impl.conv2d_backward_input
conv2d_backward_weight = _impl.conv2d_backward_weight
jacobi_eigvalsh = _impl.jacobi_eigvalsh


def compiled():
    """The compiled module, or None if it was not built."""
    try:
        from . import _ckernels
    except ImportError:
        return None
    return _ckernels

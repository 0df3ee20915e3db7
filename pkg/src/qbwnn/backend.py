"""Selects the quantization kernel implementation at import time.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``QBWNN_PURE_PYTHON`` is set to a non-empty value other
than ``0``, the numpy fallback is used.  Both produce identical bits.
"""
import os

from . import _kernels_py

_compiled = None
if os.environ.get("QBWNN_PURE_PYTHON", "0") in ("", "0"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None

_active = _compiled if _compiled is not None else _kernels_py

BACKEND = _active.BACKEND_NAME
uniforms = _active.uniforms
quantize_pm1 = _active.quantize_pm1


def available():
    """Names of the kernel implementations importable in this process."""
    names = ["python"]
    if _compiled is not None:
        names.insert(0, "cython")
    return names


def get(name):
    """Return the kernel module called ``name`` ("cython" or "python")."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            try:
                from . import _kernels
            except ImportError as exc:
                raise RuntimeError("compiled kernel is not built") from exc
            return _kernels
        return _compiled
    raise ValueError(f"unknown backend {name!r}")

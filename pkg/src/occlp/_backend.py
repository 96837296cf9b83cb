"""Kernel selection: compiled extension when importable, numpy otherwise.

Set OCCLP_PURE_PYTHON=1 to force the numpy implementation.
"""
import os

from . import _kernels_py

if os.environ.get("OCCLP_PURE_PYTHON"):
    kernels = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as kernels
        BACKEND = "cython"
    except ImportError:
        kernels = _kernels_py
        BACKEND = "python"


def get_kernels(name=None):
    if name is None:
        return kernels
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown backend {name!r}")

"""Kernel dispatch: compiled extension when available, pure Python otherwise.

Set ``UFPFTS_PURE_PYTHON=1`` in the environment to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
bspline_design = _kernels_py.bspline_design
slice_logvar = _kernels_py.slice_logvar

if not os.environ.get("UFPFTS_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        BACKEND = "cython"
        bspline_design = _compiled.bspline_design
        slice_logvar = _compiled.slice_logvar

__all__ = ["BACKEND", "bspline_design", "slice_logvar"]

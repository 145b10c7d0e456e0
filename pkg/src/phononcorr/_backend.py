"""Kernel selection: compiled extension when importable, numpy otherwise.

Set ``PHONONCORR_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
kernels = _kernels_py

if os.environ.get("PHONONCORR_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from ._ext import kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        kernels = _compiled
        BACKEND = "cython"

lindblad_rhs = kernels.lindblad_rhs
pair_histogram = kernels.pair_histogram

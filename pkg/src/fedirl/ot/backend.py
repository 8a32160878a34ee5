"""Selects the compiled log-sum-exp kernels, falling back to numpy.

Set ``FEDIRL_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _lse_fallback

BACKEND = "numpy"
_impl = _lse_fallback
if os.environ.get("FEDIRL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _lse as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _lse_fallback


def lse_rows(C, g, eps):
    return _impl.lse_rows(np.ascontiguousarray(C, dtype=float), np.ascontiguousarray(g, dtype=float), float(eps))


def lse_cols(C, f, eps):
    return _impl.lse_cols(np.ascontiguousarray(C, dtype=float), np.ascontiguousarray(f, dtype=float), float(eps))

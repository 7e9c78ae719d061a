"""Kernel dispatch: compiled extension when importable, NumPy fallback otherwise.

Set ``FANOUT_PURE_PYTHON=1`` before import to force the fallback.
"""
import os

from . import _pykernels

COMPILED = False
if not os.environ.get("FANOUT_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl
        COMPILED = True
    except ImportError:  # extension not built
        _impl = _pykernels
else:
    _impl = _pykernels

chebyshev_series = _impl.chebyshev_series
norm_sq_eigen = _impl.norm_sq_eigen
norm_crossing = _impl.norm_crossing
chebyshev_moments = _impl.chebyshev_moments
bessel_j_sequence = _impl.bessel_j_sequence

BACKEND = "cython" if COMPILED else "python"

"""Hot kernels: compiled extension when available, numpy fallback otherwise.

Set ``LRDSEST_BACKEND=python`` to force the fallback.
"""

import os

from . import _pykernels

_forced = os.environ.get("LRDSEST_BACKEND", "").strip().lower()

if _forced == "python":
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:
        if _forced == "cython":
            raise
        _impl = _pykernels
        BACKEND = "python"

scale_solve = _impl.scale_solve
irls = _impl.irls

OK, NO_SOLUTION, ALL_ZERO = _pykernels.OK, _pykernels.NO_SOLUTION, _pykernels.ALL_ZERO
CONVERGED = _pykernels.CONVERGED
MAX_ITER = _pykernels.MAX_ITER
STALLED = _pykernels.STALLED
EXACT_FIT = _pykernels.EXACT_FIT
SINGULAR = _pykernels.SINGULAR

__all__ = ["BACKEND", "irls", "scale_solve", "backends"]


def backends():
    """Map backend name to module for every backend importable here."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out

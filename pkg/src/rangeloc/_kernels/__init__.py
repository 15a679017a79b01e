"""Kernel backend selection.

The compiled Cython extension is preferred; the NumPy implementation is the
fallback.  Set ``RANGELOC_PURE=1`` to force the fallback (used by the
benchmark and by tests that exercise both backends).
"""

import os

from . import pure

OPTIMAL = pure.OPTIMAL
INFEASIBLE = pure.INFEASIBLE
UNBOUNDED = pure.UNBOUNDED
ITERATION_LIMIT = pure.ITERATION_LIMIT

if os.environ.get("RANGELOC_PURE"):
    _impl = pure
    BACKEND = "pure"
else:
    try:
        from . import _core as _impl
        BACKEND = "compiled"
    except ImportError:
        _impl = pure
        BACKEND = "pure"

simplex_solve = _impl.simplex_solve
maxdet_solve = _impl.maxdet_solve


def available_backends():
    """Importable kernel backends, keyed by name."""
    out = {"pure": pure}
    try:
        from . import _core
        out["compiled"] = _core
    except ImportError:
        pass
    return out

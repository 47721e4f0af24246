"""Kernel selection.

The compiled ``_core`` extension is used when it imports; otherwise (or when
``MERANK_PURE_PYTHON`` is set to a non-empty value) the pure-Python
``_core_py`` module takes its place. Both expose the same functions.
"""
from __future__ import annotations

import os

if os.environ.get("MERANK_PURE_PYTHON"):
    from . import _core_py as impl
else:
    try:
        from . import _core as impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _core_py as impl

IMPLEMENTATION: str = impl.IMPLEMENTATION

ndtr = impl.ndtr
npdf = impl.npdf
log_ndtr = impl.log_ndtr
mills = impl.mills
ndtri = impl.ndtri
objective = impl.objective
gradient = impl.gradient
closed_form = impl.closed_form
solve_exact = impl.solve_exact


def available_implementations() -> dict:
    """Every kernel module importable in this environment, keyed by name."""
    from . import _core_py

    found = {"python": _core_py}
    try:
        from . import _core  # type: ignore[attr-defined]
    except ImportError:
        pass
    else:
        found["cython"] = _core
    return found

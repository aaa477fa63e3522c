"""Backend selection for the hot loops.

The compiled extension is used when it was built; otherwise (or when the
environment variable ``LATTICESPREAD_PURE_PYTHON`` is set to a non-empty
value other than ``0``) the numpy fallback is used.  Both backends return
identical results up to floating-point summation order.
"""

from __future__ import annotations

import os

from . import _kernels_py

_force_python = os.environ.get("LATTICESPREAD_PURE_PYTHON", "") not in ("", "0")

try:
    if _force_python:
        raise ImportError("pure-python backend requested")
    from . import _kernels as _compiled  # type: ignore[attr-defined]
except ImportError:
    _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"

_impl = _compiled if _compiled is not None else _kernels_py

trig_sums = _impl.trig_sums
marching_squares = _impl.marching_squares


def backends() -> dict:
    """Available kernel implementations keyed by name."""
    out = {"python": _kernels_py}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out

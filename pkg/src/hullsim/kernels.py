"""Backend selection for the hot kernels.

The compiled extension is preferred.  Setting ``HULLSIM_PURE_PYTHON=1`` (or a
missing build) selects the NumPy implementation, which follows the same
algorithm step for step.
"""
from __future__ import annotations

import os

from . import _pykernels

if os.environ.get("HULLSIM_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

barrier_eval = _impl.barrier_eval
plane_solve = _impl.plane_solve
friction_solve = _impl.friction_solve

STATUS_OK = 0
STATUS_MAX_ITER = 1
STATUS_INFEASIBLE = 2
STATUS_STALLED = 3


def get_backend(name: str):
    """Return the kernel module for ``"python"`` or ``"cython"``."""
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown backend {name!r}")

"""Differentiable articulated rigid bodies built from convex hulls."""
import logging as _logging
import os as _os


def _cap_threads() -> None:
    # SDRS_THREADS caps the worker count of the numeric libraries; it must be
    # applied before numpy loads its BLAS
    raw = _os.environ.get("SDRS_THREADS")
    if raw is None:
        return
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        _logging.getLogger(__name__).warning("ignoring SDRS_THREADS=%r (expected a positive integer)", raw)
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        _os.environ[var] = str(n)


_cap_threads()

__version__ = "0.1.0"

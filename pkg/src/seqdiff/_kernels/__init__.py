"""Kernel backend selection.

The compiled Cython kernel handles float32 sequential scans; everything
else (float64 inputs, parallel mode, or a missing extension) routes to the
numpy implementations. Set SEQDIFF_BACKEND=numpy to force the fallback, or
SEQDIFF_BACKEND=cython to fail loudly if the extension did not build.
"""

from __future__ import annotations

import os

import numpy as np

from . import scan_numpy

_requested = os.environ.get("SEQDIFF_BACKEND", "").strip().lower()
_cy = None
if _requested != "numpy":
    try:
        from . import _scan_cy as _cy  # type: ignore[attr-defined]
    except ImportError:
        _cy = None
if _requested == "cython" and _cy is None:
    raise ImportError("SEQDIFF_BACKEND=cython requested but the compiled kernel is missing")

BACKEND = "cython" if _cy is not None else "numpy"


def has_compiled() -> bool:
    return _cy is not None


def _c32(arr):
    return np.ascontiguousarray(arr, dtype=np.float32)


def scan_fwd(x, Bm, C, dt, A):
    if _cy is not None and x.dtype == np.float32:
        return _cy.scan_fwd(_c32(x), _c32(Bm), _c32(C), _c32(dt), _c32(A))
    return scan_numpy.scan_fwd(x, Bm, C, dt, A)


def scan_fwd_parallel(x, Bm, C, dt, A):
    return scan_numpy.scan_fwd_parallel(x, Bm, C, dt, A)


def scan_bwd(x, Bm, C, dt, A, h, dy):
    if _cy is not None and x.dtype == np.float32 and h.dtype == np.float32:
        dy32 = _c32(dy)
        return _cy.scan_bwd(_c32(x), _c32(Bm), _c32(C), _c32(dt), _c32(A), _c32(h), dy32)
    return scan_numpy.scan_bwd(x, Bm, C, dt, A, h, dy)

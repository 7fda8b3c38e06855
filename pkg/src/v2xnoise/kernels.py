"""Raster kernel dispatch.

The compiled extension is used when it imports; otherwise the numpy
implementation takes over. Set ``V2XNOISE_BACKEND=python`` to force the
fallback (``cython`` makes a missing extension an error).
"""

import os

import numpy as np

from . import _kernels_py

_requested = os.environ.get("V2XNOISE_BACKEND", "auto").lower()
if _requested not in ("auto", "python", "cython"):
    raise ImportError(f"V2XNOISE_BACKEND must be auto, python or cython, not {_requested!r}")

_impl = _kernels_py
BACKEND = "python"
if _requested != "python":
    try:
        from . import _kernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise


def implementation(name=None):
    """Return the kernel module for ``name`` ("python"/"cython") or the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    from . import _kernels

    return _kernels


def zbuffer_min(rows, cols, depth, height, width):
    return _impl.zbuffer_min(
        np.ascontiguousarray(rows, dtype=np.int64),
        np.ascontiguousarray(cols, dtype=np.int64),
        np.ascontiguousarray(depth, dtype=np.float64),
        int(height),
        int(width),
    )


def pool_masked(depth, valid, window, take_max=True):
    return _impl.pool_masked(
        np.ascontiguousarray(depth, dtype=np.float64), np.asarray(valid, dtype=bool), int(window), bool(take_max)
    )


def warp_bilinear(img, hinv):
    return _impl.warp_bilinear(np.ascontiguousarray(img, dtype=np.uint8), np.asarray(hinv, dtype=np.float64))

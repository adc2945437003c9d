"""Backend selection for the sampling kernels.

The compiled extension is used when importable; set ``DIFFORM_BACKEND=python``
to force the numpy fallback. ``DIFFORM_THREADS`` caps the number of threads
used by the compiled gather kernels (0 or unset means one per CPU).
"""
from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _threads() -> int:
    try:
        n = int(os.environ.get("DIFFORM_THREADS", "0"))
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)


def _choose():
    want = os.environ.get("DIFFORM_BACKEND", "auto").lower()
    if want == "python" or _ckernels is None:
        return "python"
    return "cython"


BACKEND = _choose()


def available_backends() -> list[str]:
    return ["python"] + (["cython"] if _ckernels is not None else [])


def sample(vol, coords, want_grad=False, backend=None):
    """Linearly sample every channel of ``vol`` (``(C, *dims)``) at ``coords`` (``(d, N)``).

    Returns values ``(C, N)`` and, when ``want_grad``, positional
    derivatives ``(C, d, N)``.
    """
    backend = backend or BACKEND
    if backend == "python":
        return _kernels_py.sample(vol, coords, want_grad)
    vol = np.ascontiguousarray(vol, dtype=np.float64)
    coords = np.ascontiguousarray(coords, dtype=np.float64)
    fn = _ckernels.sample3 if coords.shape[0] == 3 else _ckernels.sample2
    return fn(vol, coords, bool(want_grad), _threads())


def scatter(cot, coords, dims, backend=None):
    """Adjoint of :func:`sample` w.r.t. the volume: returns ``(C, *dims)``."""
    backend = backend or BACKEND
    if backend == "python":
        return _kernels_py.scatter(cot, coords, dims)
    cot = np.ascontiguousarray(cot, dtype=np.float64)
    coords = np.ascontiguousarray(coords, dtype=np.float64)
    if coords.shape[0] == 3:
        return _ckernels.scatter3(cot, coords, *dims)
    return _ckernels.scatter2(cot, coords, *dims)

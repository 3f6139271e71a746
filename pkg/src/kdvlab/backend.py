"""Selects the stepping kernel at import time.

The compiled extension is used when it was built; otherwise the numpy
implementation is used. ``KDVLAB_BACKEND=python`` forces the fallback and
``KDVLAB_BACKEND=compiled`` makes a missing extension an import error.

The compiled kernel evaluates the quadratic term by direct O(K^2)
convolution, so in ``auto`` mode grids with ``K > COMPILED_MAX_K`` go to the
FFT-based fallback (see ``benchmarks/bench_backends.py``). The choice depends
on ``K`` alone, never on batch size, so results do not depend on how an
ensemble is split across threads.
"""
import os

import numpy as np

from . import _fallback

try:
    from . import _kernels
except ImportError:  # extension not built
    _kernels = None

_choice = os.environ.get("KDVLAB_BACKEND", "auto").lower()
if _choice not in ("auto", "python", "compiled"):
    raise ImportError(f"KDVLAB_BACKEND must be auto, python or compiled, not {_choice!r}")
if _choice == "compiled" and _kernels is None:
    raise ImportError("KDVLAB_BACKEND=compiled but kdvlab._kernels is not built")

BACKENDS = ("python",) + (("compiled",) if _kernels is not None else ())
NAME = "compiled" if (_kernels is not None and _choice != "python") else "python"
COMPILED_MAX_K = 96


def resolve(K: int, backend=None) -> str:
    """Kernel that :func:`advance` uses for a ``K``-mode grid."""
    if backend is not None:
        return backend
    if NAME == "compiled" and _choice == "auto" and K > COMPILED_MAX_K:
        return "python"
    return NAME


def advance(*args, n, backend=None):
    """Dispatch to the chosen kernel; ``backend`` overrides the import-time choice."""
    which = resolve(args[0].shape[1], backend)
    if which == "compiled":
        if _kernels is None:
            raise RuntimeError("compiled backend unavailable")
        return _kernels.advance(*args)
    if which == "python":
        return _fallback.advance(*args, n)
    raise ValueError(f"unknown backend {which!r}")


def as_index(a):
    return np.ascontiguousarray(a, dtype=np.int64)

"""Kernel backend selection.

The grid-level hot loops (augmentation remaps, canvas decoding, fused
softmax cross-entropy) ship in two equivalent implementations: numba
``@njit`` kernels and pure-numpy fallbacks. ``TRMLAB_BACKEND`` picks one:

    TRMLAB_BACKEND=numba   force numba (raises if numba is unavailable)
    TRMLAB_BACKEND=numpy   force the pure-numpy path
    TRMLAB_BACKEND=auto    numba when importable, numpy otherwise (default)

Dense trunk algebra (the mixer matmuls) always runs through numpy/BLAS in
both modes; the flag only governs the loop kernels, where JIT pays off.
The two backends agree exactly on integer kernels and to float rounding on
reductions; a single run never mixes them.

``benchmarks/kernel_backends.py`` times both sides.
"""

from __future__ import annotations

import os

_CHOICE = os.environ.get("TRMLAB_BACKEND", "auto").strip().lower()
if _CHOICE not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"TRMLAB_BACKEND must be one of auto|numba|numpy, got {_CHOICE!r}"
    )

if _CHOICE == "numpy":
    USE_NUMBA = False
else:
    try:
        import numba  # noqa: F401

        USE_NUMBA = True
    except ImportError:
        if _CHOICE == "numba":
            raise
        USE_NUMBA = False

BACKEND = "numba" if USE_NUMBA else "numpy"


def active_backend() -> str:
    """Name of the kernel backend selected at import time."""
    return BACKEND

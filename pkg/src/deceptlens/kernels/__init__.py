"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``DECEPTLENS_DISABLE_NUMBA`` is unset or ``0``. Set it to ``1``
to force the numpy implementations (must be set before import).
"""
import os

from . import _numpy as numpy_backend

_disabled = os.environ.get("DECEPTLENS_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")

numba_backend = None
if not _disabled:
    try:
        from . import _numba as numba_backend
    except ImportError:  # pragma: no cover - numba is optional at runtime
        numba_backend = None

active = numba_backend if numba_backend is not None else numpy_backend
BACKEND = "numba" if active is numba_backend else "numpy"

scatter_add_rows = active.scatter_add_rows
softmax_rows = active.softmax_rows
softmax_rows_backward = active.softmax_rows_backward
layer_norm_cols = active.layer_norm_cols
layer_norm_cols_backward = active.layer_norm_cols_backward
midranks = active.midranks

__all__ = [
    "BACKEND",
    "numpy_backend",
    "numba_backend",
    "scatter_add_rows",
    "softmax_rows",
    "softmax_rows_backward",
    "layer_norm_cols",
    "layer_norm_cols_backward",
    "midranks",
]

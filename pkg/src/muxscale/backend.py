"""Kernel backend selection.

The convolution inner loops exist twice: a numba ``@njit`` version and a
pure-numpy version (see ``_kernels_numba`` / ``_kernels_numpy``).  The
environment variable ``MUXSCALE_BACKEND`` picks one:

* ``auto`` (default) -- numba when importable, numpy otherwise
* ``numba``          -- require numba, fail loudly if missing
* ``numpy``          -- force the pure-numpy path

``benchmarks/bench_kernels.py`` times both implementations side by side.
"""

import os

from . import _kernels_numpy

_requested = os.environ.get("MUXSCALE_BACKEND", "auto").strip().lower()
if _requested not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"MUXSCALE_BACKEND must be 'auto', 'numba' or 'numpy', got {_requested!r}"
    )

if _requested in ("auto", "numba"):
    try:
        from . import _kernels_numba as _impl

        _active = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        _impl = _kernels_numpy
        _active = "numpy"
else:
    _impl = _kernels_numpy
    _active = "numpy"


def active_backend():
    """Name of the kernel backend in use: 'numba' or 'numpy'."""
    return _active


corr2d_valid = _impl.corr2d_valid
corr2d_wgrad = _impl.corr2d_wgrad

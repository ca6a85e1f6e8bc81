"""Pure-numpy implementations of the hot convolution kernels.

These are the fallback path used when numba is unavailable or when
``MUXSCALE_BACKEND=numpy`` is set.  Products and sums are carried out in
float64 and the result is cast back to the input dtype, matching the
accumulation discipline of the numba kernels (summation order differs,
so the two backends agree only to rounding, not bitwise).

All functions operate on padded inputs; padding policy lives in
:mod:`muxscale.tensor`.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def corr2d_valid(xpad, kernel):
    """Valid cross-correlation of a (C_in, H, W) stack with a (C_out, C_in, kh, kw) kernel."""
    kh, kw = kernel.shape[2], kernel.shape[3]
    # windows[i, p, q, dy, dx] = xpad[i, p + dy, q + dx]
    windows = sliding_window_view(xpad, (kh, kw), axis=(1, 2))
    out = np.tensordot(
        kernel.astype(np.float64),
        windows.astype(np.float64),
        axes=([1, 2, 3], [0, 3, 4]),
    )
    return out.astype(xpad.dtype)


def corr2d_wgrad(xpad, gout):
    """Weight gradient of the valid correlation.

    Returns dW with dW[o, i, dy, dx] = sum_{p,q} gout[o, p, q] * xpad[i, p+dy, q+dx].
    """
    oh, ow = gout.shape[1], gout.shape[2]
    # windows[i, dy, dx, p, q] = xpad[i, dy + p, dx + q]
    windows = sliding_window_view(xpad, (oh, ow), axis=(1, 2))
    grad = np.tensordot(
        gout.astype(np.float64),
        windows.astype(np.float64),
        axes=([1, 2], [3, 4]),
    )
    return grad.astype(xpad.dtype)

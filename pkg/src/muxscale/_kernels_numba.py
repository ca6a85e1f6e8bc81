"""Numba-jitted implementations of the hot convolution kernels.

Each output element is accumulated by a single thread in a fixed loop
order (in_feature, then kernel row, then kernel column), so results are
bitwise-independent of the worker count.  Accumulation is float64; the
result is cast to the input dtype on store.
"""

import numpy as np
from numba import njit, prange


@njit(parallel=True, cache=True)
def corr2d_valid(xpad, kernel):
    c_out, c_in, kh, kw = kernel.shape
    oh = xpad.shape[1] - kh + 1
    ow = xpad.shape[2] - kw + 1
    out = np.empty((c_out, oh, ow), dtype=xpad.dtype)
    for o in prange(c_out):
        for p in range(oh):
            for q in range(ow):
                acc = 0.0
                for i in range(c_in):
                    for dy in range(kh):
                        for dx in range(kw):
                            acc += np.float64(kernel[o, i, dy, dx]) * np.float64(
                                xpad[i, p + dy, q + dx]
                            )
                out[o, p, q] = acc
    return out


@njit(parallel=True, cache=True)
def corr2d_wgrad(xpad, gout):
    c_out, oh, ow = gout.shape
    c_in = xpad.shape[0]
    kh = xpad.shape[1] - oh + 1
    kw = xpad.shape[2] - ow + 1
    grad = np.empty((c_out, c_in, kh, kw), dtype=xpad.dtype)
    for o in prange(c_out):
        for i in range(c_in):
            for dy in range(kh):
                for dx in range(kw):
                    acc = 0.0
                    for p in range(oh):
                        for q in range(ow):
                            acc += np.float64(gout[o, p, q]) * np.float64(
                                xpad[i, p + dy, q + dx]
                            )
                    grad[o, i, dy, dx] = acc
    return grad

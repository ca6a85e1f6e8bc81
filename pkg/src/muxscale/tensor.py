"""Dense rank-3 tensor arithmetic and the convolution kernels.

A *tensor* is a numpy array of shape ``(features, height, width)``,
feature-major and row-major, normally float32.  A *conv kernel* is an
array of shape ``(out_features, in_features, kernel_h, kernel_w)`` with
odd spatial dimensions.  All operations preserve the input dtype; a
model cast to float64 runs entirely in float64, which is how the
finite-difference reference paths work.  Sums inside convolutions and
reductions always accumulate in float64.

Convolution follows the deep-learning convention (cross-correlation, no
kernel flip); "same" padding pads ``(k - 1) / 2`` zeros on each side.
"""

import numpy as np

from . import backend
from .errors import DimensionError

DEFAULT_DTYPE = np.float32


def tensor(data, dtype=DEFAULT_DTYPE):
    """Coerce nested data into a validated rank-3 tensor."""
    arr = np.asarray(data, dtype=dtype)
    check_tensor(arr)
    return arr


def zeros(features, height, width, dtype=DEFAULT_DTYPE):
    return np.zeros((features, height, width), dtype=dtype)


def check_tensor(x):
    if not isinstance(x, np.ndarray) or x.ndim != 3:
        raise DimensionError(
            f"expected a (features, height, width) array, got "
            f"{getattr(x, 'shape', type(x))}"
        )
    if min(x.shape) < 1:
        raise DimensionError(f"all tensor dimensions must be >= 1, got {x.shape}")


def check_kernel(k):
    if not isinstance(k, np.ndarray) or k.ndim != 4:
        raise DimensionError(
            f"expected a (out_features, in_features, kh, kw) kernel, got "
            f"{getattr(k, 'shape', type(k))}"
        )
    if min(k.shape) < 1:
        raise DimensionError(f"all kernel dimensions must be >= 1, got {k.shape}")
    if k.shape[2] % 2 == 0 or k.shape[3] % 2 == 0:
        raise DimensionError(f"kernel spatial dims must be odd, got {k.shape[2:]}")


def conv2d(x, k, padding="same"):
    """Cross-correlate a tensor with a kernel.

    Args:
        x: input tensor (in_features, h, w).
        k: kernel (out_features, in_features, kh, kw).
        padding: "same" (zero padding, output keeps h x w) or "valid"
            (no padding, output shrinks by kh-1 x kw-1).

    Returns:
        Tensor of shape (out_features, oh, ow).
    """
    check_tensor(x)
    check_kernel(k)
    if x.shape[0] != k.shape[1]:
        raise DimensionError(
            f"input has {x.shape[0]} features but kernel expects {k.shape[1]}"
        )
    kh, kw = k.shape[2], k.shape[3]
    if padding == "same":
        ph, pw = (kh - 1) // 2, (kw - 1) // 2
        xpad = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    elif padding == "valid":
        if x.shape[1] < kh or x.shape[2] < kw:
            raise DimensionError(
                f"valid conv needs input >= kernel, got {x.shape[1:]} vs {(kh, kw)}"
            )
        xpad = x
    else:
        raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")
    xpad = np.ascontiguousarray(xpad)
    return backend.corr2d_valid(xpad, np.ascontiguousarray(k))


def _adjoint_kernel(k):
    # swap in/out features and flip spatially; the adjoint of a
    # cross-correlation is a cross-correlation with this kernel
    return np.ascontiguousarray(k.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])


def conv2d_transposed(x, k, padding="same"):
    """Exact adjoint of :func:`conv2d` with the same kernel and padding.

    For all a, b: <conv2d(a, k), b> == <a, conv2d_transposed(b, k)>.
    """
    check_tensor(x)
    check_kernel(k)
    if x.shape[0] != k.shape[0]:
        raise DimensionError(
            f"input has {x.shape[0]} features but kernel produces {k.shape[0]}"
        )
    kh, kw = k.shape[2], k.shape[3]
    kadj = _adjoint_kernel(k)
    if padding == "same":
        ph, pw = (kh - 1) // 2, (kw - 1) // 2
        xpad = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    elif padding == "valid":
        # adjoint of a valid correlation is a full correlation
        xpad = np.pad(x, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    else:
        raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")
    xpad = np.ascontiguousarray(xpad)
    return backend.corr2d_valid(xpad, kadj)


def conv2d_weight_grad(x, gout, kernel_shape, padding="same"):
    """Gradient of a conv2d output w.r.t. the kernel weights.

    ``x`` is the layer input, ``gout`` the gradient at the layer output,
    ``kernel_shape`` the (out, in, kh, kw) shape of the kernel.
    """
    check_tensor(x)
    check_tensor(gout)
    kh, kw = kernel_shape[2], kernel_shape[3]
    if padding == "same":
        ph, pw = (kh - 1) // 2, (kw - 1) // 2
        xpad = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    elif padding == "valid":
        xpad = x
    else:
        raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")
    xpad = np.ascontiguousarray(xpad)
    grad = backend.corr2d_wgrad(xpad, np.ascontiguousarray(gout))
    if grad.shape != tuple(kernel_shape):
        raise DimensionError(
            f"weight gradient shape {grad.shape} does not match kernel "
            f"{tuple(kernel_shape)}"
        )
    return grad


def elementwise(x, y, op):
    """Componentwise 'add' or 'mul' of two equal-shaped tensors."""
    check_tensor(x)
    check_tensor(y)
    if x.shape != y.shape:
        raise DimensionError(f"shape mismatch: {x.shape} vs {y.shape}")
    if op == "add":
        return x + y
    if op == "mul":
        return x * y
    raise ValueError(f"op must be 'add' or 'mul', got {op!r}")


def scale(x, s):
    check_tensor(x)
    return x * x.dtype.type(s)


def reduce_sum(x):
    """Sum of all elements, accumulated in float64."""
    check_tensor(x)
    return float(np.sum(x, dtype=np.float64))


def global_average(x):
    """Mean of each feature plane; returns a (features,) vector."""
    check_tensor(x)
    return np.mean(x, axis=(1, 2), dtype=np.float64).astype(x.dtype)


def seeded_rng(seed):
    """Deterministic random stream for the given seed.

    This is numpy's PCG64 generator (``np.random.default_rng``): seedable,
    splittable via ``spawn``, and stable across platforms.  ``seed`` may be
    an int or a sequence of ints.
    """
    return np.random.default_rng(seed)


def gaussian_fill(t, mean, std, rng):
    """Fill a tensor in place with N(mean, std^2) draws from ``rng``."""
    t[...] = rng.normal(mean, std, size=t.shape).astype(t.dtype)
    return t


def uniform_fill(t, lo, hi, rng):
    """Fill a tensor in place with U[lo, hi) draws from ``rng``."""
    t[...] = (lo + (hi - lo) * rng.random(size=t.shape)).astype(t.dtype)
    return t

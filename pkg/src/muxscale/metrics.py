"""Image quality metrics: SSIM (with analytic gradient) and PSNR.

SSIM uses the standard constants: 11x11 Gaussian window with sigma 1.5,
K1 = 0.01, K2 = 0.03, dynamic range 1.0, statistics over valid windows
only (no padding).  Inputs are (h, w) planes or (c, h, w) stacks; stacks
score each channel and average.  All statistics are computed in float64.

The gradient of the mean SSIM with respect to the first image has a
closed form: each window's local derivative splits into terms linear in
x, linear in y and constant, each of which scatters back through the
window weighting.  The scatter is exactly the adjoint of the valid
window correlation, so it reuses the conv kernels.
"""

import math

import numpy as np

from .errors import DimensionError
from .tensor import conv2d, conv2d_transposed

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    """Normalized 2-D Gaussian window (sums to 1)."""
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def _plane_pairs(x, y):
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape:
        raise DimensionError(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.ndim == 2:
        return [(x, y)]
    if x.ndim == 3:
        return [(x[c], y[c]) for c in range(x.shape[0])]
    raise DimensionError(f"expected 2-D or 3-D images, got shape {x.shape}")


def _window_kernel():
    return gaussian_window()[None, None]


def _window_sums(plane, kernel):
    return conv2d(plane[None].astype(np.float64), kernel, padding="valid")[0]


def _plane_ssim(x, y, kernel, c1, c2, with_grad):
    if x.shape[0] < SSIM_WINDOW or x.shape[1] < SSIM_WINDOW:
        raise DimensionError(
            f"image {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )
    x64 = x.astype(np.float64)
    y64 = y.astype(np.float64)
    mu_x = _window_sums(x64, kernel)
    mu_y = _window_sums(y64, kernel)
    e_xx = _window_sums(x64 * x64, kernel)
    e_yy = _window_sums(y64 * y64, kernel)
    e_xy = _window_sums(x64 * y64, kernel)
    var_x = e_xx - mu_x * mu_x
    var_y = e_yy - mu_y * mu_y
    cov = e_xy - mu_x * mu_y
    a1 = 2.0 * mu_x * mu_y + c1
    a2 = 2.0 * cov + c2
    b1 = mu_x * mu_x + mu_y * mu_y + c1
    b2 = var_x + var_y + c2
    s = (a1 * a2) / (b1 * b2)
    value = float(s.mean())
    if not with_grad:
        return value, None
    # d mean(S) / dx via the per-window chain rule, scattered back through
    # the window weights: grad = (y * W^T(P) - x * W^T(Q) + W^T(R)) / n_win
    n_win = s.size
    inv = 1.0 / (b1 * b2)
    p_map = 2.0 * a1 * inv
    q_map = 2.0 * s / b2
    r_map = 2.0 * (mu_y * (a2 - a1) + s * mu_x * (b1 - b2)) * inv
    scatter = lambda m: conv2d_transposed(m[None], kernel, padding="valid")[0]
    grad = (y64 * scatter(p_map) - x64 * scatter(q_map) + scatter(r_map)) / n_win
    return value, grad


def ssim(x, y, peak=1.0):
    """Mean structural similarity between two images; 1.0 means identical."""
    value, _ = _ssim_impl(x, y, peak, with_grad=False)
    return value


def ssim_and_grad(x, y, peak=1.0):
    """Mean SSIM and its gradient with respect to ``x`` (same shape as x)."""
    return _ssim_impl(x, y, peak, with_grad=True)


def _ssim_impl(x, y, peak, with_grad):
    pairs = _plane_pairs(x, y)
    kernel = _window_kernel()
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    values, grads = [], []
    for xp, yp in pairs:
        v, g = _plane_ssim(xp, yp, kernel, c1, c2, with_grad)
        values.append(v)
        grads.append(g)
    value = float(np.mean(values))
    if not with_grad:
        return value, None
    x = np.asarray(x)
    grad = np.stack(grads) / len(grads)
    if x.ndim == 2:
        grad = grad[0]
    return value, grad.astype(x.dtype)


def mse(x, y):
    """Mean squared error, accumulated in float64."""
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape:
        raise DimensionError(f"shape mismatch: {x.shape} vs {y.shape}")
    diff = x.astype(np.float64) - y.astype(np.float64)
    return float(np.mean(diff * diff))


def psnr(x, y, peak=1.0):
    """Peak signal-to-noise ratio in dB; +inf for identical images."""
    err = mse(x, y)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)

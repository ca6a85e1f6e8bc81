"""Classical reference resamplers and color-space support.

``area_downscale`` is the canonical downscale operator used for dataset
generation and the downscale-consistency loss.  ``bicubic_upscale`` is
the baseline upscaler: separable cubic convolution with a = -0.5
(Catmull-Rom), half-pixel center alignment and edge-clamped borders; its
per-phase tap weights sum to 1, so constants are preserved exactly.
Color conversion uses the BT.601 full-range matrices with the usual 0.5
chroma offset.

Images here are (h, w) planes or (channels, h, w) stacks; values are
treated as linear in [0, 1].
"""

import numpy as np

from .errors import DimensionError


def _as_stack(img):
    arr = np.asarray(img)
    if arr.ndim == 2:
        return arr[None], True
    if arr.ndim == 3:
        return arr, False
    raise DimensionError(f"expected a 2-D or 3-D image, got shape {arr.shape}")


def area_downscale(img, m_x, m_y):
    """Average each m_y x m_x block into one output pixel."""
    stack, squeeze = _as_stack(img)
    c, h, w = stack.shape
    if m_x < 1 or m_y < 1:
        raise DimensionError(f"factors must be >= 1, got ({m_x}, {m_y})")
    if h % m_y or w % m_x:
        raise DimensionError(f"image {(h, w)} not divisible by ({m_y}, {m_x})")
    out = stack.reshape(c, h // m_y, m_y, w // m_x, m_x).mean(
        axis=(2, 4), dtype=np.float64
    )
    out = out.astype(stack.dtype)
    return out[0] if squeeze else out


def area_downscale_adjoint(g, m_x, m_y):
    """Adjoint of :func:`area_downscale`: spread g / (m_x * m_y) over each block."""
    stack, squeeze = _as_stack(g)
    spread = np.repeat(np.repeat(stack, m_y, axis=1), m_x, axis=2)
    out = (spread / stack.dtype.type(m_x * m_y)).astype(stack.dtype)
    return out[0] if squeeze else out


def nearest_upscale(img, m_x, m_y):
    """Replicate each pixel into an m_y x m_x block."""
    stack, squeeze = _as_stack(img)
    out = np.repeat(np.repeat(stack, m_y, axis=1), m_x, axis=2)
    return out[0] if squeeze else out


def _cubic_weight(t):
    # Keys cubic convolution kernel, a = -0.5
    at = np.abs(t)
    w = np.where(
        at <= 1.0,
        (1.5 * at - 2.5) * at * at + 1.0,
        np.where(at < 2.0, ((-0.5 * at + 2.5) * at - 4.0) * at + 2.0, 0.0),
    )
    return w


def _bicubic_taps(n_in, m):
    """Per-output-pixel source indices (4, n_out) and weights (4, n_out)."""
    r = np.arange(n_in * m)
    s = (r + 0.5) / m - 0.5  # half-pixel center alignment
    base = np.floor(s).astype(np.int64)
    frac = s - base
    idx = np.stack([base - 1, base, base + 1, base + 2])
    weights = _cubic_weight(frac[None, :] - (idx - base))
    idx = np.clip(idx, 0, n_in - 1)  # edge clamp
    return idx, weights


def _upscale_axis(stack, m, axis):
    if m == 1:
        return stack
    idx, w = _bicubic_taps(stack.shape[axis], m)
    moved = np.moveaxis(stack.astype(np.float64), axis, -1)
    out = np.zeros(moved.shape[:-1] + (idx.shape[1],), dtype=np.float64)
    for t in range(4):
        out += moved[..., idx[t]] * w[t]
    return np.moveaxis(out, -1, axis)


def bicubic_upscale(img, m_x, m_y):
    """Separable bicubic upscale by integer factors (m_x, m_y)."""
    stack, squeeze = _as_stack(img)
    if m_x < 1 or m_y < 1:
        raise DimensionError(f"factors must be >= 1, got ({m_x}, {m_y})")
    out = _upscale_axis(stack, m_y, 1)
    out = _upscale_axis(out, m_x, 2)
    out = out.astype(stack.dtype)
    return out[0] if squeeze else out


def bicubic_upscale_adjoint(g, m_x, m_y):
    """Adjoint of :func:`bicubic_upscale` (scatter with the same taps)."""
    stack, squeeze = _as_stack(g)
    out = stack.astype(np.float64)
    for axis, m in ((2, m_x), (1, m_y)):
        if m == 1:
            continue
        n_in = out.shape[axis] // m
        idx, w = _bicubic_taps(n_in, m)
        moved = np.moveaxis(out, axis, -1)
        acc = np.zeros(moved.shape[:-1] + (n_in,), dtype=np.float64)
        for t in range(4):
            np.add.at(acc, (..., idx[t]), moved * w[t])
        out = np.moveaxis(acc, -1, axis)
    out = out.astype(stack.dtype)
    return out[0] if squeeze else out


# BT.601 full-range luma coefficients
_KR, _KG, _KB = 0.299, 0.587, 0.114

_RGB_TO_YCC = np.array(
    [
        [_KR, _KG, _KB],
        [-_KR / (2 * (1 - _KB)), -_KG / (2 * (1 - _KB)), 0.5],
        [0.5, -_KG / (2 * (1 - _KR)), -_KB / (2 * (1 - _KR))],
    ]
)
_YCC_OFFSET = np.array([0.0, 0.5, 0.5])
_YCC_TO_RGB = np.linalg.inv(_RGB_TO_YCC)


def _apply_matrix(img, matrix):
    if img.ndim != 3 or img.shape[0] != 3:
        raise DimensionError(f"expected a (3, h, w) image, got {img.shape}")
    return np.einsum("ij,jhw->ihw", matrix, img.astype(np.float64))


def rgb_to_ycbcr(img):
    """BT.601 full-range RGB -> YCbCr; gray maps to (v, 0.5, 0.5)."""
    out = _apply_matrix(img, _RGB_TO_YCC) + _YCC_OFFSET[:, None, None]
    return out.astype(img.dtype)


def ycbcr_to_rgb(img):
    """Inverse of :func:`rgb_to_ycbcr` (round-trip within 1e-5 per channel)."""
    out = _apply_matrix(
        img.astype(np.float64) - _YCC_OFFSET[:, None, None].astype(np.float64), _YCC_TO_RGB
    )
    return out.astype(img.dtype)


def ycbcr_to_rgb_adjoint(g):
    """Adjoint of the linear part of :func:`ycbcr_to_rgb` (for backprop)."""
    return _apply_matrix(g, _YCC_TO_RGB.T).astype(g.dtype)

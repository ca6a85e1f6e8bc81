"""Multirate grid operators: polyphase up/down-sampling and MuxOut layers.

An upscale factor ``(m_x, m_y)`` splits the fine lattice into
``M = m_x * m_y`` interleaved grids.  Grid ``n`` (0-based, ``0 <= n < M``)
has row offset ``a = n % m_y`` and column offset ``b = n // m_y``.
``upsample`` writes a coarse image onto one grid (zeros elsewhere) and
``downsample`` reads it back; the two are exact mutual adjoints and pure
copies, so no floating-point error is involved.

A MuxOut layer views its input as M groups of ``g_in`` features, places
group ``n`` onto grid ``perm_k[n]`` for each of ``g_out`` permutations,
and stacks the results: ``g_in * M`` features at (h, w) become
``g_out * g_in`` features at (m_y*h, m_x*w).  T-MuxOut is the exact
adjoint (a pooling operation).  Because the grids of each permutation
partition the fine lattice, ``t_muxout(muxout(x)) == g_out * x``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .tensor import check_tensor


@dataclass(frozen=True)
class SamplingGrid:
    """One of the M = m_x * m_y interleaved grids of an upscale factor."""

    m_x: int
    m_y: int
    n: int

    def __post_init__(self):
        if self.m_x < 1 or self.m_y < 1:
            raise DimensionError(f"factors must be >= 1, got ({self.m_x}, {self.m_y})")
        if not 0 <= self.n < self.M:
            raise DimensionError(f"grid index {self.n} out of range [0, {self.M})")

    @property
    def M(self):
        return self.m_x * self.m_y

    @property
    def a(self):
        """Row offset of this grid."""
        return self.n % self.m_y

    @property
    def b(self):
        """Column offset of this grid."""
        return self.n // self.m_y


def upsample(x, grid):
    """Place each pixel of ``x`` on ``grid`` of the (m_y*h, m_x*w) lattice, zeros elsewhere."""
    check_tensor(x)
    f, h, w = x.shape
    out = np.zeros((f, grid.m_y * h, grid.m_x * w), dtype=x.dtype)
    out[:, grid.a :: grid.m_y, grid.b :: grid.m_x] = x
    return out


def downsample(x, grid):
    """Read ``grid`` back out of a fine-lattice tensor; adjoint of :func:`upsample`."""
    check_tensor(x)
    f, h, w = x.shape
    if h % grid.m_y or w % grid.m_x:
        raise DimensionError(
            f"spatial dims {(h, w)} not divisible by factors ({grid.m_y}, {grid.m_x})"
        )
    return x[:, grid.a :: grid.m_y, grid.b :: grid.m_x].copy()


def circular_permutations(M, g_out):
    """The g_out cyclic shifts of (0, 1, ..., M-1), k-th shifted by k."""
    if M < 1 or g_out < 1:
        raise DimensionError(f"M and g_out must be >= 1, got {M}, {g_out}")
    return [tuple((n + k) % M for n in range(M)) for k in range(g_out)]


@dataclass(frozen=True)
class MuxOutSpec:
    """Grouping and permutation choices of one MuxOut / T-MuxOut layer.

    ``permutations`` holds g_out bijections of {0, ..., M-1}; entry k maps
    input group n to output grid permutations[k][n].
    """

    m_x: int
    m_y: int
    g_in: int
    g_out: int
    permutations: tuple

    def __post_init__(self):
        if self.m_x < 1 or self.m_y < 1 or self.g_in < 1 or self.g_out < 1:
            raise DimensionError("MuxOut factors and group counts must be >= 1")
        perms = tuple(tuple(p) for p in self.permutations)
        object.__setattr__(self, "permutations", perms)
        if len(perms) != self.g_out:
            raise DimensionError(
                f"expected {self.g_out} permutations, got {len(perms)}"
            )
        for p in perms:
            if sorted(p) != list(range(self.M)):
                raise DimensionError(
                    f"permutation {p} is not a bijection of 0..{self.M - 1}"
                )

    @property
    def M(self):
        return self.m_x * self.m_y


def circular_muxout_spec(m_x, m_y, g_in, g_out=None):
    """MuxOutSpec with circular permutations; g_out defaults to M."""
    M = m_x * m_y
    if g_out is None:
        g_out = M
    return MuxOutSpec(m_x, m_y, g_in, g_out, tuple(circular_permutations(M, g_out)))


def muxout(x, spec):
    """Merge M groups of g_in features onto permuted grids of the fine lattice.

    Input (g_in*M, h, w) -> output (g_out*g_in, m_y*h, m_x*w); output group
    k holds input group n on grid permutations[k][n].
    """
    check_tensor(x)
    M, g = spec.M, spec.g_in
    if x.shape[0] != g * M:
        raise DimensionError(
            f"muxout needs {g}*{M}={g * M} input features, got {x.shape[0]}"
        )
    f, h, w = x.shape
    out = np.zeros((spec.g_out * g, spec.m_y * h, spec.m_x * w), dtype=x.dtype)
    for k, perm in enumerate(spec.permutations):
        for n in range(M):
            grid = SamplingGrid(spec.m_x, spec.m_y, perm[n])
            out[k * g : (k + 1) * g, grid.a :: spec.m_y, grid.b :: spec.m_x] = x[
                n * g : (n + 1) * g
            ]
    return out


def t_muxout(x, spec):
    """Exact adjoint of :func:`muxout`: output group n sums grid reads over all permutations.

    Input (g_out*g_in, H, W) -> output (g_in*M, H/m_y, W/m_x).  Grid reads
    are accumulated in float64 so that ``t_muxout(muxout(x)) == g_out * x``
    holds exactly.
    """
    check_tensor(x)
    M, g = spec.M, spec.g_in
    if x.shape[0] != spec.g_out * g:
        raise DimensionError(
            f"t_muxout needs {spec.g_out}*{g}={spec.g_out * g} input features, "
            f"got {x.shape[0]}"
        )
    f, H, W = x.shape
    if H % spec.m_y or W % spec.m_x:
        raise DimensionError(
            f"spatial dims {(H, W)} not divisible by factors ({spec.m_y}, {spec.m_x})"
        )
    acc = np.zeros((g * M, H // spec.m_y, W // spec.m_x), dtype=np.float64)
    for k, perm in enumerate(spec.permutations):
        for n in range(M):
            grid = SamplingGrid(spec.m_x, spec.m_y, perm[n])
            acc[n * g : (n + 1) * g] += x[
                k * g : (k + 1) * g, grid.a :: spec.m_y, grid.b :: spec.m_x
            ]
    return acc.astype(x.dtype)

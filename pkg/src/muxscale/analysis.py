"""Extraction of the linear structure a network reduces to at fixed activations.

Once the activation gains recorded for a probe input are frozen, the whole
network is a linear, space-variant operator ``W_eff`` plus a bias
``b_eff``.  ``effective_bias`` recovers ``b_eff`` by running the masked
network (biases included) on a zero input.  ``forward_analysis`` recovers
columns of ``W_eff`` by pushing unit impulses through the bias-free masked
network: column j is the adaptive interpolation filter of input location
j.  ``backward_analysis`` recovers rows through the transposed masked
network: row i shows which inputs influence output location i.

``render_filter_atlas`` lays the probed filters out as a grayscale grid of
tiles, each cropped around its location so tiles are comparable across
positions.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .netgraph import forward, forward_masked, output_shape, transpose_masked
from .tensor import check_tensor


def record_trace(model, probe):
    """Run the network on ``probe`` and return its activation trace."""
    check_tensor(probe)
    _, trace = forward(model, probe, record_trace=True)
    return trace


def effective_bias(model, trace):
    """Masked forward pass of a zero input with biases included."""
    zero = np.zeros(trace.input_shapes[0], dtype=_trace_dtype(model))
    return forward_masked(model, trace, zero, include_bias=True)


def _trace_dtype(model):
    params = model.parameters()
    return params[0].dtype if params else np.float32


@dataclass
class EffectiveModel:
    """Probed pieces of the frozen-activation linear system."""

    input_shape: tuple
    output_shape: tuple
    b_eff: np.ndarray
    columns: dict = field(default_factory=dict)  # (feature, row, col) -> output-shaped
    rows: dict = field(default_factory=dict)  # (feature, row, col) -> input-shaped


def _check_coords(coords, shape, what):
    bad = [c for c in coords if not all(0 <= v < s for v, s in zip(c, shape))]
    if bad:
        raise DimensionError(f"{what} coordinates out of range {shape}: {bad}")


def forward_analysis(model, trace, coords):
    """Columns of the effective filter for the given input coordinates.

    Each coordinate is (feature, row, col) in the probe input; the stored
    column is the network response to a unit impulse there, with
    activations frozen and biases off.
    """
    in_shape = tuple(trace.input_shapes[0])
    coords = [tuple(c) for c in coords]
    _check_coords(coords, in_shape, "input")
    dtype = _trace_dtype(model)
    eff = EffectiveModel(
        input_shape=in_shape,
        output_shape=tuple(trace.output_shape),
        b_eff=effective_bias(model, trace),
    )
    for c in coords:
        delta = np.zeros(in_shape, dtype=dtype)
        delta[c] = 1
        eff.columns[c] = forward_masked(model, trace, delta, include_bias=False)
    return eff


def backward_analysis(model, trace, coords):
    """Rows of the effective filter for the given output coordinates."""
    out_shape = tuple(trace.output_shape)
    coords = [tuple(c) for c in coords]
    _check_coords(coords, out_shape, "output")
    dtype = _trace_dtype(model)
    eff = EffectiveModel(
        input_shape=tuple(trace.input_shapes[0]),
        output_shape=out_shape,
        b_eff=effective_bias(model, trace),
    )
    for c in coords:
        delta = np.zeros(out_shape, dtype=dtype)
        delta[c] = 1
        eff.rows[c] = transpose_masked(model, trace, delta)
    return eff


def _tile_center(coord, from_shape, to_shape):
    # map a (row, col) across the resolution change between input and output
    r, c = coord[1], coord[2]
    sy = to_shape[1] / from_shape[1]
    sx = to_shape[2] / from_shape[2]
    return (int(round((r + 0.5) * sy - 0.5)), int(round((c + 0.5) * sx - 0.5)))


def _crop(plane, center, tile_h, tile_w):
    out = np.zeros((tile_h, tile_w), dtype=plane.dtype)
    r0 = center[0] - tile_h // 2
    c0 = center[1] - tile_w // 2
    rs, re = max(r0, 0), min(r0 + tile_h, plane.shape[0])
    cs, ce = max(c0, 0), min(c0 + tile_w, plane.shape[1])
    if rs < re and cs < ce:
        out[rs - r0 : re - r0, cs - c0 : ce - c0] = plane[rs:re, cs:ce]
    return out


def _auto_tile_size(tiles_with_centers):
    extent = 1
    for plane, center in tiles_with_centers:
        nz = np.argwhere(plane != 0)
        if nz.size == 0:
            continue
        dr = np.abs(nz[:, 0] - center[0]).max()
        dc = np.abs(nz[:, 1] - center[1]).max()
        extent = max(extent, int(dr), int(dc))
    return 2 * extent + 1


def filter_tiles(effective, which="columns", feature=0, tile_size=None):
    """Cropped filter tiles in coordinate order.

    Returns (coords, tiles): for columns the tile is the output response
    cropped around the probed input location (mapped to output space); for
    rows it is the input footprint cropped around the probed output
    location (mapped to input space).  ``tile_size`` defaults to the
    smallest odd window covering every tile's support.
    """
    store = effective.columns if which == "columns" else effective.rows
    if not store:
        raise DimensionError(f"effective model has no {which}")
    if which == "columns":
        from_shape, to_shape = effective.input_shape, effective.output_shape
    else:
        from_shape, to_shape = effective.output_shape, effective.input_shape
    coords = sorted(store)
    planes = []
    for c in coords:
        arr = store[c]
        if not 0 <= feature < arr.shape[0]:
            raise DimensionError(f"feature {feature} out of range for {arr.shape}")
        planes.append((arr[feature], _tile_center(c, from_shape, to_shape)))
    if tile_size is None:
        tile_size = _auto_tile_size(planes)
    if tile_size < 1 or tile_size % 2 == 0:
        raise DimensionError(f"tile_size must be odd and >= 1, got {tile_size}")
    tiles = [_crop(p, center, tile_size, tile_size) for p, center in planes]
    return coords, tiles


def render_filter_atlas(
    effective,
    which="columns",
    tiles_per_row=None,
    normalization="atlas",
    feature=0,
    tile_size=None,
):
    """Assemble probed filters into an 8-bit grayscale atlas.

    Signed filter values map symmetrically: 0 to mid-gray (128), -max|w|
    to black, +max|w| to white.  ``normalization`` scales by the largest
    magnitude of the whole atlas ("atlas", default, so tiles are
    comparable) or of each tile ("tile").  Tiles are laid out row-major
    with 1-px black separators and a 1-px border, giving an atlas of
    ``rows * (tile + 1) + 1`` by ``cols * (tile + 1) + 1`` pixels.
    """
    if normalization not in ("atlas", "tile"):
        raise ValueError(f"normalization must be 'atlas' or 'tile', got {normalization!r}")
    coords, tiles = filter_tiles(effective, which, feature, tile_size)
    th = tiles[0].shape[0]
    n = len(tiles)
    cols = tiles_per_row or int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / cols))
    atlas = np.zeros((rows * (th + 1) + 1, cols * (th + 1) + 1), dtype=np.uint8)
    atlas_peak = max(float(np.max(np.abs(t))) for t in tiles)
    for idx in range(rows * cols):
        r, c = divmod(idx, cols)
        y0, x0 = r * (th + 1) + 1, c * (th + 1) + 1
        if idx >= n:
            atlas[y0 : y0 + th, x0 : x0 + th] = 128
            continue
        tile = tiles[idx].astype(np.float64)
        peak = atlas_peak if normalization == "atlas" else float(np.max(np.abs(tile)))
        if peak == 0:
            atlas[y0 : y0 + th, x0 : x0 + th] = 128
            continue
        gray = np.floor(127.5 * (1.0 + tile / peak) + 0.5)
        atlas[y0 : y0 + th, x0 : x0 + th] = np.clip(gray, 0, 255).astype(np.uint8)
    return atlas


def parse_coords(spec, shape):
    """Coordinate list from a CLI spec.

    Either explicit triples "f,r,c;f,r,c;..." or "stride:SRxSC" which
    samples feature 0 every SR rows and SC columns starting at (0, 0).
    """
    spec = spec.strip()
    if spec.startswith("stride:"):
        part = spec[len("stride:") :]
        try:
            if "x" in part:
                sr, sc = (int(v) for v in part.split("x", 1))
            else:
                sr = sc = int(part)
        except ValueError:
            raise DimensionError(f"bad stride spec {spec!r}") from None
        if sr < 1 or sc < 1:
            raise DimensionError(f"strides must be >= 1 in {spec!r}")
        return [
            (0, r, c)
            for r in range(0, shape[1], sr)
            for c in range(0, shape[2], sc)
        ]
    coords = []
    for chunk in spec.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(",")
        if len(parts) != 3:
            raise DimensionError(f"bad coordinate {chunk!r}, expected f,r,c")
        try:
            coords.append(tuple(int(p) for p in parts))
        except ValueError:
            raise DimensionError(f"bad coordinate {chunk!r}, expected integers") from None
    if not coords:
        raise DimensionError(f"no coordinates in {spec!r}")
    _check_coords(coords, shape, "requested")
    return coords

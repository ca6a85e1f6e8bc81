"""Network assembly, execution, masked/transposed execution and serialization.

A network is a flat list of layers of six kinds:

* ``conv``        -- cross-correlation with a weight kernel, no bias
* ``activ``       -- per-feature bias followed by ReLU (the switching part)
* ``tanh_activ``  -- per-feature bias followed by tanh
* ``muxout``      -- polyphase unpooling (see :mod:`muxscale.sampling`)
* ``t_muxout``    -- its adjoint, used as pooling
* ``global_avg``  -- per-feature global mean, output shape (f, 1, 1)

Keeping filtering (conv) and switching (activ) as separate layers is what
makes the masked passes below possible: an activation's elementwise gain
``mask = sigma(y) / y`` (taken as 1 at y = 0) can be recorded for one
probe input and then replayed, which freezes the network into a linear,
space-variant operator plus a bias.
"""

from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np

from . import container
from .errors import DimensionError, FormatError, TraceError, UnsupportedLayerError
from .sampling import MuxOutSpec, muxout, t_muxout
from .tensor import (
    DEFAULT_DTYPE,
    check_kernel,
    check_tensor,
    conv2d,
    conv2d_transposed,
    seeded_rng,
)


@dataclass
class ConvLayer:
    kind: ClassVar[str] = "conv"
    weights: np.ndarray  # (out_features, in_features, kh, kw)
    padding: str = "same"

    def __post_init__(self):
        check_kernel(self.weights)
        if self.padding not in ("same", "valid"):
            raise ValueError(f"bad padding {self.padding!r}")


@dataclass
class ActivLayer:
    """ReLU with a per-feature bias applied before the nonlinearity."""

    kind: ClassVar[str] = "activ"
    bias: np.ndarray  # (features,)

    def __post_init__(self):
        self.bias = np.atleast_1d(self.bias)


@dataclass
class TanhActivLayer:
    kind: ClassVar[str] = "tanh_activ"
    bias: np.ndarray

    def __post_init__(self):
        self.bias = np.atleast_1d(self.bias)


@dataclass
class MuxOutLayer:
    kind: ClassVar[str] = "muxout"
    spec: MuxOutSpec


@dataclass
class TMuxOutLayer:
    kind: ClassVar[str] = "t_muxout"
    spec: MuxOutSpec


@dataclass
class GlobalAvgLayer:
    kind: ClassVar[str] = "global_avg"


ACTIVATION_KINDS = ("activ", "tanh_activ")
LAYER_KINDS = ("conv", "activ", "tanh_activ", "muxout", "t_muxout", "global_avg")


@dataclass
class InputSpec:
    """What the first layer expects: channel count and spatial divisibility."""

    channels: int
    noise_channels: int = 0
    multiple_of: tuple = (1, 1)


@dataclass
class NetworkModel:
    layers: list
    input_spec: InputSpec
    metadata: dict = field(default_factory=dict)

    def parameters(self):
        """Weight/bias arrays in layer order (views, not copies)."""
        params = []
        for layer in self.layers:
            if layer.kind == "conv":
                params.append(layer.weights)
            elif layer.kind in ACTIVATION_KINDS:
                params.append(layer.bias)
        return params

    def astype(self, dtype):
        """Copy of the model with parameters cast to ``dtype``."""
        layers = []
        for layer in self.layers:
            if layer.kind == "conv":
                layers.append(ConvLayer(layer.weights.astype(dtype), layer.padding))
            elif layer.kind == "activ":
                layers.append(ActivLayer(layer.bias.astype(dtype)))
            elif layer.kind == "tanh_activ":
                layers.append(TanhActivLayer(layer.bias.astype(dtype)))
            else:
                layers.append(layer)
        return NetworkModel(layers, self.input_spec, dict(self.metadata))


def count_params(model):
    return sum(int(p.size) for p in model.parameters())


def layer_output_shape(layer, in_shape):
    """Shape inference for one layer; raises DimensionError on mismatch."""
    f, h, w = in_shape
    if layer.kind == "conv":
        out_f, in_f, kh, kw = layer.weights.shape
        if f != in_f:
            raise DimensionError(f"conv expects {in_f} features, got {f}")
        if layer.padding == "same":
            return (out_f, h, w)
        if h < kh or w < kw:
            raise DimensionError(f"valid conv input {(h, w)} smaller than {(kh, kw)}")
        return (out_f, h - kh + 1, w - kw + 1)
    if layer.kind in ACTIVATION_KINDS:
        if layer.bias.shape[0] != f:
            raise DimensionError(
                f"{layer.kind} bias has {layer.bias.shape[0]} features, input has {f}"
            )
        return in_shape
    if layer.kind == "muxout":
        s = layer.spec
        if f != s.g_in * s.M:
            raise DimensionError(f"muxout expects {s.g_in * s.M} features, got {f}")
        return (s.g_out * s.g_in, s.m_y * h, s.m_x * w)
    if layer.kind == "t_muxout":
        s = layer.spec
        if f != s.g_out * s.g_in:
            raise DimensionError(f"t_muxout expects {s.g_out * s.g_in} features, got {f}")
        if h % s.m_y or w % s.m_x:
            raise DimensionError(f"t_muxout input {(h, w)} not divisible by factors")
        return (s.g_in * s.M, h // s.m_y, w // s.m_x)
    if layer.kind == "global_avg":
        return (f, 1, 1)
    raise UnsupportedLayerError(f"unknown layer kind {layer.kind!r}")


def infer_shapes(model, input_shape):
    """Per-layer output shapes for a given input shape (build-time check)."""
    shapes = []
    shape = tuple(input_shape)
    for layer in model.layers:
        shape = layer_output_shape(layer, shape)
        shapes.append(shape)
    return shapes


def output_shape(model, input_shape):
    return infer_shapes(model, input_shape)[-1] if model.layers else tuple(input_shape)


@dataclass
class ActivationTrace:
    """Recorded activation masks of one forward pass.

    ``masks[i]`` is the gain tensor of layer i when it is an activation
    layer and None otherwise; ``input_shapes[i]`` is the shape entering
    layer i (needed to transpose shape-collapsing layers).
    """

    layer_kinds: tuple
    masks: list
    input_shapes: list
    output_shape: tuple
    probe: np.ndarray = None


def _check_trace(model, trace):
    kinds = tuple(l.kind for l in model.layers)
    if trace.layer_kinds != kinds:
        raise TraceError(
            f"trace recorded on layers {trace.layer_kinds}, model has {kinds}"
        )


def _activation_mask(kind, y):
    if kind == "activ":
        # ReLU gain: 1 for y >= 0 (the y == 0 convention is harmless), else 0
        return (y >= 0).astype(y.dtype)
    t = np.tanh(y)
    mask = np.ones_like(y)
    np.divide(t, y, out=mask, where=y != 0)
    return mask


def _check_input(model, x):
    check_tensor(x)
    spec = model.input_spec
    if x.shape[0] != spec.channels:
        raise DimensionError(
            f"model expects {spec.channels} input channels, got {x.shape[0]}"
        )
    my, mx = spec.multiple_of
    if x.shape[1] % my or x.shape[2] % mx:
        raise DimensionError(
            f"input {x.shape[1:]} must be a multiple of {(my, mx)}"
        )


def forward(model, x, record_trace=False):
    """Run the network; optionally record activation masks.

    Returns the output tensor, or ``(output, trace)`` when
    ``record_trace`` is set.
    """
    _check_input(model, x)
    masks, input_shapes = [], []
    probe = x
    for layer in model.layers:
        input_shapes.append(x.shape)
        if layer.kind == "conv":
            x = conv2d(x, layer.weights, layer.padding)
            masks.append(None)
        elif layer.kind == "activ":
            y = x + layer.bias[:, None, None]
            masks.append(_activation_mask("activ", y) if record_trace else None)
            x = np.maximum(y, 0)
        elif layer.kind == "tanh_activ":
            y = x + layer.bias[:, None, None]
            masks.append(_activation_mask("tanh_activ", y) if record_trace else None)
            x = np.tanh(y)
        elif layer.kind == "muxout":
            x = muxout(x, layer.spec)
            masks.append(None)
        elif layer.kind == "t_muxout":
            x = t_muxout(x, layer.spec)
            masks.append(None)
        elif layer.kind == "global_avg":
            x = np.mean(x, axis=(1, 2), dtype=np.float64).astype(x.dtype)[
                :, None, None
            ]
            masks.append(None)
        else:
            raise UnsupportedLayerError(f"unknown layer kind {layer.kind!r}")
    if record_trace:
        trace = ActivationTrace(
            layer_kinds=tuple(l.kind for l in model.layers),
            masks=masks,
            input_shapes=input_shapes,
            output_shape=x.shape,
            probe=probe,
        )
        return x, trace
    return x


def forward_masked(model, trace, x, include_bias=True):
    """Forward pass with every activation replaced by its recorded gain.

    With ``include_bias`` the pass reproduces the probe's own forward run
    exactly; without it the pass is linear in ``x`` (used for impulse
    probing).
    """
    _check_trace(model, trace)
    check_tensor(x)
    if tuple(x.shape) != tuple(trace.input_shapes[0]):
        raise TraceError(
            f"input shape {x.shape} does not match trace {trace.input_shapes[0]}"
        )
    for i, layer in enumerate(model.layers):
        if layer.kind == "conv":
            x = conv2d(x, layer.weights, layer.padding)
        elif layer.kind in ACTIVATION_KINDS:
            v = x + layer.bias[:, None, None] if include_bias else x
            x = trace.masks[i] * v
        elif layer.kind == "muxout":
            x = muxout(x, layer.spec)
        elif layer.kind == "t_muxout":
            x = t_muxout(x, layer.spec)
        elif layer.kind == "global_avg":
            x = np.mean(x, axis=(1, 2), dtype=np.float64).astype(x.dtype)[
                :, None, None
            ]
        else:
            raise UnsupportedLayerError(f"unknown layer kind {layer.kind!r}")
    return x


def transpose_masked(model, trace, z):
    """Exact adjoint of the bias-free masked forward pass.

    Layers run in reverse with each linear layer replaced by its adjoint;
    recorded gains are reapplied where they sat in the forward pass (the
    gain ahead of the input is implicitly all-ones).
    """
    _check_trace(model, trace)
    check_tensor(z)
    if tuple(z.shape) != tuple(trace.output_shape):
        raise TraceError(
            f"input shape {z.shape} does not match trace output {trace.output_shape}"
        )
    for i in reversed(range(len(model.layers))):
        layer = model.layers[i]
        if layer.kind == "conv":
            z = conv2d_transposed(z, layer.weights, layer.padding)
        elif layer.kind in ACTIVATION_KINDS:
            z = trace.masks[i] * z
        elif layer.kind == "muxout":
            z = t_muxout(z, layer.spec)
        elif layer.kind == "t_muxout":
            z = muxout(z, layer.spec)
        elif layer.kind == "global_avg":
            f, h, w = trace.input_shapes[i]
            g = z[:, 0, 0] / z.dtype.type(h * w)
            z = np.broadcast_to(g[:, None, None], (f, h, w)).copy()
        else:
            raise UnsupportedLayerError(f"unknown layer kind {layer.kind!r}")
    return z


def init_params(model, scheme="he", seed=0):
    """Fill conv weights with fan-in-scaled Gaussians and zero all biases.

    The only scheme is "he": std = sqrt(2 / (in_features * kh * kw)).
    Deterministic for a given seed.
    """
    if scheme != "he":
        raise ValueError(f"unknown init scheme {scheme!r}")
    rng = seeded_rng(seed)
    for layer in model.layers:
        if layer.kind == "conv":
            out_f, in_f, kh, kw = layer.weights.shape
            std = np.sqrt(2.0 / (in_f * kh * kw))
            layer.weights[...] = rng.normal(0.0, std, layer.weights.shape).astype(
                layer.weights.dtype
            )
        elif layer.kind in ACTIVATION_KINDS:
            layer.bias[...] = 0
    return model


# --- serialization ----------------------------------------------------------


def _layer_manifest(layer):
    if layer.kind == "conv":
        return {
            "kind": "conv",
            "shape": list(layer.weights.shape),
            "padding": layer.padding,
        }
    if layer.kind in ACTIVATION_KINDS:
        return {"kind": layer.kind, "features": int(layer.bias.shape[0])}
    if layer.kind in ("muxout", "t_muxout"):
        s = layer.spec
        return {
            "kind": layer.kind,
            "m_x": s.m_x,
            "m_y": s.m_y,
            "g_in": s.g_in,
            "g_out": s.g_out,
            "permutations": [list(p) for p in s.permutations],
        }
    if layer.kind == "global_avg":
        return {"kind": "global_avg"}
    raise UnsupportedLayerError(f"cannot serialize layer kind {layer.kind!r}")


def save_model(model, path):
    """Write the model to ``path`` in the MUXS container format (bit-exact)."""
    tensors, arrays = [], []
    for i, layer in enumerate(model.layers):
        if layer.kind == "conv":
            tensors.append(
                {
                    "name": f"layer{i}.weights",
                    "shape": list(layer.weights.shape),
                    "dtype": container.dtype_code(layer.weights.dtype),
                }
            )
            arrays.append(layer.weights)
        elif layer.kind in ACTIVATION_KINDS:
            tensors.append(
                {
                    "name": f"layer{i}.bias",
                    "shape": list(layer.bias.shape),
                    "dtype": container.dtype_code(layer.bias.dtype),
                }
            )
            arrays.append(layer.bias)
    manifest = {
        "kind": "model",
        "input_spec": {
            "channels": model.input_spec.channels,
            "noise_channels": model.input_spec.noise_channels,
            "multiple_of": list(model.input_spec.multiple_of),
        },
        "metadata": model.metadata,
        "layers": [_layer_manifest(l) for l in model.layers],
        "tensors": tensors,
    }
    container.write_container(path, manifest, arrays)


def load_model(path):
    """Read a model written by :func:`save_model`."""
    manifest, arrays = container.read_container(path)
    if manifest.get("kind") != "model":
        raise FormatError(f"container holds {manifest.get('kind')!r}, not a model")
    arrays = iter(arrays)
    layers = []
    try:
        for entry in manifest["layers"]:
            kind = entry["kind"]
            if kind == "conv":
                layers.append(ConvLayer(next(arrays), entry["padding"]))
            elif kind in ACTIVATION_KINDS:
                bias = next(arrays)
                layers.append(
                    ActivLayer(bias) if kind == "activ" else TanhActivLayer(bias)
                )
            elif kind in ("muxout", "t_muxout"):
                spec = MuxOutSpec(
                    entry["m_x"],
                    entry["m_y"],
                    entry["g_in"],
                    entry["g_out"],
                    tuple(tuple(p) for p in entry["permutations"]),
                )
                layers.append(
                    MuxOutLayer(spec) if kind == "muxout" else TMuxOutLayer(spec)
                )
            elif kind == "global_avg":
                layers.append(GlobalAvgLayer())
            else:
                raise FormatError(f"unknown layer kind {kind!r} in manifest")
        ispec = manifest["input_spec"]
        input_spec = InputSpec(
            channels=int(ispec["channels"]),
            noise_channels=int(ispec.get("noise_channels", 0)),
            multiple_of=tuple(ispec.get("multiple_of", (1, 1))),
        )
    except (KeyError, TypeError, StopIteration) as exc:
        raise FormatError(f"malformed model manifest: {exc!r}") from None
    return NetworkModel(layers, input_spec, dict(manifest.get("metadata", {})))

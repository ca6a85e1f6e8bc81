"""Assembly of the color upscaling systems and the critic network.

Three variants share one generator recipe (stacks of 3x3 convs with ReLU
switching and a polyphase MuxOut per 2x stage):

* ``low_color``   -- one network estimates full-factor luminance from the
  3 color channels; chroma is upscaled with plain bicubic.
* ``high_color``  -- an independent network per color channel, all at the
  full factor.
* ``chroma_sub``  -- the preferred configuration: a full-factor luminance
  network plus a chroma network that stops one 2x step short of the
  output resolution, finished by bicubic.  This mirrors the 4:2:0 idea of
  spending capacity on luminance.

Every network also takes ``noise_channels`` extra N(0,1) input planes;
deterministic training learns to suppress them, generative training uses
them to synthesize detail.  The critic mirrors the generator with
T-MuxOut pooling per stage and ends conv -> global average -> tanh, so
its output is a single score in (-1, 1).
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, FormatError
from .metrics import ssim
from .netgraph import (
    ActivLayer,
    ConvLayer,
    GlobalAvgLayer,
    InputSpec,
    MuxOutLayer,
    NetworkModel,
    TanhActivLayer,
    TMuxOutLayer,
    forward,
    init_params,
    load_model,
    save_model,
)
from .sampling import circular_muxout_spec
from .tensor import seeded_rng
from .training import backward, forward_tape, accumulate_grads
from .resample import (
    area_downscale,
    bicubic_upscale,
    bicubic_upscale_adjoint,
    rgb_to_ycbcr,
    ycbcr_to_rgb,
    ycbcr_to_rgb_adjoint,
)

VARIANTS = ("low_color", "high_color", "chroma_sub")


@dataclass
class SystemConfig:
    variant: str = "chroma_sub"
    factor: tuple = (2, 2)  # (m_x, m_y)
    features: int = 64
    stage_convs: int = 3
    head_convs: int = 1  # full-resolution convs after the last MuxOut stage
    kernel_size: int = 3
    noise_channels: int = 1
    seed: int = 0
    luma: dict = field(default_factory=dict)  # per-path overrides
    chroma: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise FormatError(f"config error at $.variant: unknown variant {self.variant!r}")
        self.factor = tuple(int(v) for v in self.factor)
        if len(self.factor) != 2 or min(self.factor) < 1:
            raise FormatError(f"config error at $.factor: need two factors >= 1")
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise FormatError("config error at $.kernel_size: must be odd and >= 1")
        if self.features < 1 or self.stage_convs < 1:
            raise FormatError("config error at $.features/$.stage_convs: must be >= 1")
        if self.noise_channels < 0:
            raise FormatError("config error at $.noise_channels: must be >= 0")

    def to_dict(self):
        return {
            "variant": self.variant,
            "factor": list(self.factor),
            "features": self.features,
            "stage_convs": self.stage_convs,
            "head_convs": self.head_convs,
            "kernel_size": self.kernel_size,
            "noise_channels": self.noise_channels,
            "seed": self.seed,
            "luma": self.luma,
            "chroma": self.chroma,
        }


_CONFIG_KEYS = {
    "variant": str,
    "factor": (list, tuple),
    "features": int,
    "stage_convs": int,
    "head_convs": int,
    "kernel_size": int,
    "noise_channels": int,
    "seed": int,
    "luma": dict,
    "chroma": dict,
}


def config_from_dict(d):
    """Validated SystemConfig from a JSON dict; errors carry the JSON path."""
    if not isinstance(d, dict):
        raise FormatError("config error at $: expected an object")
    kwargs = {}
    for key, value in d.items():
        if key not in _CONFIG_KEYS:
            raise FormatError(f"config error at $.{key}: unknown key")
        if not isinstance(value, _CONFIG_KEYS[key]):
            raise FormatError(
                f"config error at $.{key}: expected {_CONFIG_KEYS[key]}, "
                f"got {type(value).__name__}"
            )
        kwargs[key] = value
    return SystemConfig(**kwargs)


def stage_plan(m_x, m_y):
    """Decompose a factor into per-stage MuxOut factors (2x steps first)."""
    stages = []
    fx, fy = m_x, m_y
    while fx > 1 or fy > 1:
        gx = 2 if fx > 1 and fx % 2 == 0 else (fx if fx > 1 else 1)
        gy = 2 if fy > 1 and fy % 2 == 0 else (fy if fy > 1 else 1)
        stages.append((gx, gy))
        fx //= gx
        fy //= gy
    return stages


def _conv(in_f, out_f, k, dtype=np.float32):
    return ConvLayer(np.zeros((out_f, in_f, k, k), dtype=dtype))


def build_generator_net(in_ch, out_ch, factor, features, stage_convs, head_convs, kernel_size):
    """Upscaling network: adapter conv, conv/MuxOut stages, full-resolution head.

    The head runs ``head_convs`` conv/ReLU pairs at the output resolution
    (post-upscale mapping) and ends with an output conv followed by a
    ReLU switching layer, so images come out nonnegative.
    """
    k = kernel_size

    def block(n_in, n_out):
        return [_conv(n_in, n_out, k), ActivLayer(np.zeros(n_out, np.float32))]

    layers = block(in_ch, features)
    stages = stage_plan(*factor)
    for gx, gy in stages:
        m = gx * gy
        if features % m:
            raise DimensionError(
                f"features={features} not divisible by stage factor M={m}"
            )
        for _ in range(stage_convs - 1):
            layers += block(features, features)
        layers.append(_conv(features, features, k))
        layers.append(MuxOutLayer(circular_muxout_spec(gx, gy, features // m)))
        layers.append(ActivLayer(np.zeros(features, np.float32)))
    if not stages:
        for _ in range(stage_convs):
            layers += block(features, features)
    for _ in range(head_convs):
        layers += block(features, features)
    layers += block(features, out_ch)
    return NetworkModel(layers, InputSpec(channels=in_ch), metadata={})


def build_discriminator(cfg):
    """Critic mirroring the generator: T-MuxOut pooling, global average, tanh head."""
    k = cfg.kernel_size
    f = cfg.features
    layers = [_conv(3, f, k), ActivLayer(np.zeros(f, np.float32))]
    stages = stage_plan(*cfg.factor)
    for gx, gy in stages:
        m = gx * gy
        if f % m:
            raise DimensionError(f"features={f} not divisible by stage factor M={m}")
        for _ in range(cfg.stage_convs - 1):
            layers += [_conv(f, f, k), ActivLayer(np.zeros(f, np.float32))]
        layers.append(_conv(f, f, k))
        layers.append(TMuxOutLayer(circular_muxout_spec(gx, gy, f // m)))
        layers.append(ActivLayer(np.zeros(f, np.float32)))
    layers.append(_conv(f, 1, k))
    layers.append(GlobalAvgLayer())
    layers.append(TanhActivLayer(np.zeros(1, np.float32)))
    my = int(np.prod([g[1] for g in stages])) if stages else 1
    mx = int(np.prod([g[0] for g in stages])) if stages else 1
    model = NetworkModel(
        layers, InputSpec(channels=3, multiple_of=(my, mx)), metadata={"role": "critic"}
    )
    init_params(model, seed=[cfg.seed, 99])
    return model


def _path_params(cfg, which):
    override = cfg.luma if which == "luma" else cfg.chroma
    return (
        int(override.get("features", cfg.features)),
        int(override.get("stage_convs", cfg.stage_convs)),
    )


class UpscaleSystem:
    """A variant's generator networks plus their fixed post-resamplers."""

    def __init__(self, config, nets, post_resamplers=None):
        self.config = config
        self.nets = nets
        self.post_resamplers = post_resamplers or {}

    @property
    def factor(self):
        return self.config.factor

    def _noise(self, height, width, rng, dtype=np.float32):
        nc = self.config.noise_channels
        if nc == 0:
            return None
        if rng is None:
            return np.zeros((nc, height, width), dtype=dtype)
        return rng.normal(0.0, 1.0, (nc, height, width)).astype(dtype)

    def _with_noise(self, channels, rng):
        noise = self._noise(channels.shape[1], channels.shape[2], rng, channels.dtype)
        if noise is None:
            return channels
        return np.concatenate([channels, noise], axis=0)

    def training_examples(self, hr, lr, rng):
        """Per-network (input_channels, target, noise) triples for one patch pair."""
        cfg = self.config
        out = {}
        if cfg.variant == "high_color":
            for i, name in enumerate(("r", "g", "b")):
                noise = self._noise(lr.shape[1], lr.shape[2], rng, lr.dtype)
                out[name] = (lr[i : i + 1], hr[i : i + 1], noise)
            return out
        ycc_hr = rgb_to_ycbcr(hr)
        noise = self._noise(lr.shape[1], lr.shape[2], rng, lr.dtype)
        out["luma"] = (lr, ycc_hr[0:1], noise)
        if cfg.variant == "chroma_sub":
            ycc_lr = rgb_to_ycbcr(lr)
            target = area_downscale(ycc_hr[1:3], 2, 2)
            noise2 = self._noise(lr.shape[1], lr.shape[2], rng, lr.dtype)
            out["chroma"] = (ycc_lr[1:3], target, noise2)
        return out

    # --- inference ---------------------------------------------------------

    def _run(self, lr, rng, with_tapes):
        cfg = self.config
        mx, my = cfg.factor
        runner = forward_tape if with_tapes else lambda net, x: (forward(net, x), None)
        tapes = {}
        if cfg.variant == "high_color":
            planes = []
            for i, name in enumerate(("r", "g", "b")):
                out, tape = runner(self.nets[name], self._with_noise(lr[i : i + 1], rng))
                planes.append(out)
                tapes[name] = tape
            return np.concatenate(planes, axis=0), tapes
        ycc_lr = rgb_to_ycbcr(lr)
        y_hr, tape = runner(self.nets["luma"], self._with_noise(lr, rng))
        tapes["luma"] = tape
        if cfg.variant == "low_color":
            cc_hr = bicubic_upscale(ycc_lr[1:3], mx, my)
        else:
            cc_mid, tape_c = runner(self.nets["chroma"], self._with_noise(ycc_lr[1:3], rng))
            tapes["chroma"] = tape_c
            cc_hr = bicubic_upscale(cc_mid, 2, 2)
        ycc_hr = np.concatenate([y_hr, cc_hr.astype(y_hr.dtype)], axis=0)
        return ycbcr_to_rgb(ycc_hr), tapes

    def upscale(self, lr, rng=None):
        """RGB upscale of a (3, h, w) image; ``rng`` seeds the noise planes."""
        if lr.ndim != 3 or lr.shape[0] != 3:
            raise DimensionError(f"expected a (3, h, w) image, got {lr.shape}")
        out, _ = self._run(lr, rng, with_tapes=False)
        return out

    # --- generative-training hooks ------------------------------------------

    def forward_gan(self, lr, rng):
        return self._run(lr, rng, with_tapes=True)

    def backward_gan(self, tapes, g_rgb, grad_buffers):
        """Pull an output-RGB gradient back into per-network parameter grads."""
        cfg = self.config
        if cfg.variant == "high_color":
            for i, name in enumerate(("r", "g", "b")):
                layer_grads, _ = backward(self.nets[name], tapes[name], g_rgb[i : i + 1])
                accumulate_grads(grad_buffers[name], self.nets[name], layer_grads)
            return
        g_ycc = ycbcr_to_rgb_adjoint(g_rgb)
        layer_grads, _ = backward(self.nets["luma"], tapes["luma"], g_ycc[0:1])
        accumulate_grads(grad_buffers["luma"], self.nets["luma"], layer_grads)
        if cfg.variant == "chroma_sub":
            g_mid = bicubic_upscale_adjoint(g_ycc[1:3], 2, 2)
            layer_grads, _ = backward(self.nets["chroma"], tapes["chroma"], g_mid)
            accumulate_grads(grad_buffers["chroma"], self.nets["chroma"], layer_grads)


def build_system(cfg):
    """Instantiate and seed a variant's generator networks."""
    nc = cfg.noise_channels
    mx, my = cfg.factor
    nets, post = {}, {}
    if cfg.variant == "low_color":
        f, d = _path_params(cfg, "luma")
        nets["luma"] = build_generator_net(3 + nc, 1, cfg.factor, f, d, cfg.kernel_size)
        post["chroma"] = ("bicubic", mx, my)
    elif cfg.variant == "high_color":
        f, d = _path_params(cfg, "luma")
        for name in ("r", "g", "b"):
            nets[name] = build_generator_net(1 + nc, 1, cfg.factor, f, d, cfg.kernel_size)
    else:  # chroma_sub
        if mx % 2 or my % 2:
            raise DimensionError(
                f"chroma_sub needs an even factor to split off a 2x bicubic "
                f"step, got {cfg.factor}"
            )
        f, d = _path_params(cfg, "luma")
        nets["luma"] = build_generator_net(3 + nc, 1, cfg.factor, f, d, cfg.kernel_size)
        cf, cd = _path_params(cfg, "chroma")
        nets["chroma"] = build_generator_net(
            2 + nc, 2, (mx // 2, my // 2), cf, cd, cfg.kernel_size
        )
        post["chroma"] = ("bicubic", 2, 2)
    for i, (name, net) in enumerate(sorted(nets.items())):
        net.input_spec.noise_channels = nc
        net.metadata.update({"name": name, "variant": cfg.variant, "seed": cfg.seed})
        init_params(net, seed=[cfg.seed, i])
    return UpscaleSystem(cfg, nets, post)


# --- checkpoint directories ---------------------------------------------------


def save_system(system, dirpath):
    """Write system.json plus one MUXS model file per network."""
    os.makedirs(dirpath, exist_ok=True)
    with open(os.path.join(dirpath, "system.json"), "w") as f:
        json.dump(system.config.to_dict(), f, indent=2, sort_keys=True)
    for name, net in system.nets.items():
        save_model(net, os.path.join(dirpath, f"{name}.muxs"))


def load_system(dirpath):
    """Rebuild an UpscaleSystem from a checkpoint directory."""
    cfg_path = os.path.join(dirpath, "system.json")
    if not os.path.isfile(cfg_path):
        raise FormatError(f"no system.json in {dirpath}")
    with open(cfg_path) as f:
        try:
            cfg = config_from_dict(json.load(f))
        except json.JSONDecodeError as exc:
            raise FormatError(f"malformed system.json: {exc}") from None
    system = build_system(cfg)
    for name in system.nets:
        system.nets[name] = load_model(os.path.join(dirpath, f"{name}.muxs"))
    return system


def evaluate_sres(system, images, noise_seed=0):
    """Mean held-out SSIM of the system and of the bicubic baseline.

    Each image is downscaled with the canonical area operator, upscaled
    both ways, and scored against the original.
    """
    mx, my = system.factor
    net_scores, bicubic_scores = [], []
    for i, hr in enumerate(images):
        lr = area_downscale(hr, mx, my)
        out = system.upscale(lr, seeded_rng([noise_seed, i]))
        net_scores.append(ssim(np.clip(out, 0.0, 1.0), hr))
        bicubic_scores.append(ssim(np.clip(bicubic_upscale(lr, mx, my), 0.0, 1.0), hr))
    return float(np.mean(net_scores)), float(np.mean(bicubic_scores))

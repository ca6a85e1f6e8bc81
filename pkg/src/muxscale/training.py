"""Training machinery: reverse-mode gradients, Adam, losses and data.

The gradient engine is a hand-rolled reverse pass over the flat layer
list: conv backward is the transposed conv plus a correlation for the
weight gradient, MuxOut backward is T-MuxOut (and vice versa), and the
activation layers gate the gradient with their local derivative.  Every
analytic gradient here is validated against central finite differences
in the test suite.

Deterministic upscaler training minimizes ``-mean SSIM(G(lr, noise), hr)``.
Generative training uses the two-player losses

    L_D = E[D(x~)] - E[D(x)] + lambda_gp * E[(||grad_xhat D(xhat)|| - 1)^2]
    L_G = -E[D(x~)] + lambda_down * E[Delta(x_lr, downscale(G(x_lr)))]

where ``x~ = G(x_lr)`` and ``xhat`` mixes real and generated samples with
a uniform epsilon.  Both loss values (including the gradient-penalty
term, recovered by backprop to the critic input) are computed and logged
each step; the critic's *training* gradient comes from the first two
terms only, with weights clipped to a fixed bound after each update, as
training through the penalty needs second-order derivatives that this
engine does not provide.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import container
from .errors import DimensionError, FormatError, NumericError, TraceError
from .metrics import mse, ssim, ssim_and_grad
from .netgraph import ACTIVATION_KINDS, forward
from .resample import area_downscale, area_downscale_adjoint
from .sampling import muxout, t_muxout
from .tensor import conv2d, conv2d_transposed, conv2d_weight_grad, seeded_rng


# --- reverse-mode engine ----------------------------------------------------


@dataclass
class GradientTape:
    """Per-layer inputs cached by a forward pass, consumed by backward."""

    layer_kinds: tuple
    inputs: list
    output: np.ndarray


def forward_tape(model, x):
    """Forward pass that caches every layer input for backprop."""
    inputs = []
    for layer in model.layers:
        inputs.append(x)
        if layer.kind == "conv":
            x = conv2d(x, layer.weights, layer.padding)
        elif layer.kind == "activ":
            x = np.maximum(x + layer.bias[:, None, None], 0)
        elif layer.kind == "tanh_activ":
            x = np.tanh(x + layer.bias[:, None, None])
        elif layer.kind == "muxout":
            x = muxout(x, layer.spec)
        elif layer.kind == "t_muxout":
            x = t_muxout(x, layer.spec)
        elif layer.kind == "global_avg":
            x = np.mean(x, axis=(1, 2), dtype=np.float64).astype(x.dtype)[
                :, None, None
            ]
        else:
            raise TraceError(f"cannot tape layer kind {layer.kind!r}")
    return x, GradientTape(tuple(l.kind for l in model.layers), inputs, x)


def backward(model, tape, output_grad):
    """Reverse pass; returns (per-layer parameter grads, input grad).

    The gradient list aligns with ``model.layers``: conv entries hold the
    kernel gradient, activation entries the bias gradient, linear
    resampling layers None.
    """
    if tape.layer_kinds != tuple(l.kind for l in model.layers):
        raise TraceError("tape does not match model layers")
    g = output_grad
    grads = [None] * len(model.layers)
    for i in reversed(range(len(model.layers))):
        layer = model.layers[i]
        xin = tape.inputs[i]
        if layer.kind == "conv":
            grads[i] = conv2d_weight_grad(xin, g, layer.weights.shape, layer.padding)
            g = conv2d_transposed(g, layer.weights, layer.padding)
        elif layer.kind == "activ":
            y = xin + layer.bias[:, None, None]
            g = g * (y > 0)
            grads[i] = np.sum(g, axis=(1, 2), dtype=np.float64).astype(g.dtype)
        elif layer.kind == "tanh_activ":
            t = np.tanh(xin + layer.bias[:, None, None])
            g = g * (1.0 - t * t)
            grads[i] = np.sum(g, axis=(1, 2), dtype=np.float64).astype(g.dtype)
        elif layer.kind == "muxout":
            g = t_muxout(g, layer.spec)
        elif layer.kind == "t_muxout":
            g = muxout(g, layer.spec)
        elif layer.kind == "global_avg":
            f, h, w = xin.shape
            spread = g[:, 0, 0] / g.dtype.type(h * w)
            g = np.broadcast_to(spread[:, None, None], (f, h, w)).copy()
        else:
            raise TraceError(f"cannot backprop layer kind {layer.kind!r}")
    return grads, g


def param_grads_to_list(model, layer_grads):
    """Flatten per-layer grads into the order of ``model.parameters()``."""
    flat = []
    for layer, grad in zip(model.layers, layer_grads):
        if layer.kind == "conv" or layer.kind in ACTIVATION_KINDS:
            flat.append(grad)
    return flat


def zero_param_grads(model):
    return [np.zeros_like(p) for p in model.parameters()]


def accumulate_grads(total, model, layer_grads, scale=1.0):
    for buf, grad in zip(total, param_grads_to_list(model, layer_grads)):
        buf += grad * buf.dtype.type(scale)
    return total


# --- Adam -------------------------------------------------------------------


@dataclass
class AdamState:
    """Bias-corrected Adam moments for one parameter list."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def init_adam(params, lr):
    return AdamState(
        lr=lr,
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
    )


def adam_step(params, grads, state):
    """One in-place Adam update; deterministic for identical inputs."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError("parameter/gradient/state lengths disagree")
    state.step += 1
    t = state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise DimensionError(f"grad shape {g.shape} != param shape {p.shape}")
        dt = p.dtype.type
        b1, b2 = dt(state.beta1), dt(state.beta2)
        m[...] = b1 * m + (dt(1) - b1) * g
        v[...] = b2 * v + (dt(1) - b2) * (g * g)
        m_hat = m / dt(1.0 - state.beta1**t)
        v_hat = v / dt(1.0 - state.beta2**t)
        p -= dt(state.lr) * m_hat / (np.sqrt(v_hat) + dt(state.eps))
    return params


def clip_params(params, bound):
    """Clamp every parameter to [-bound, bound] in place (WGAN critic)."""
    for p in params:
        np.clip(p, -bound, bound, out=p)
    return params


def save_adam(state, path):
    tensors, arrays = [], []
    for prefix, moments in (("m", state.m), ("v", state.v)):
        for i, arr in enumerate(moments):
            tensors.append(
                {
                    "name": f"{prefix}{i}",
                    "shape": list(arr.shape),
                    "dtype": container.dtype_code(arr.dtype),
                }
            )
            arrays.append(arr)
    manifest = {
        "kind": "adam",
        "lr": state.lr,
        "beta1": state.beta1,
        "beta2": state.beta2,
        "eps": state.eps,
        "step": state.step,
        "count": len(state.m),
        "tensors": tensors,
    }
    container.write_container(path, manifest, arrays)


def load_adam(path):
    manifest, arrays = container.read_container(path)
    if manifest.get("kind") != "adam":
        raise FormatError(f"container holds {manifest.get('kind')!r}, not adam state")
    n = int(manifest["count"])
    if len(arrays) != 2 * n:
        raise FormatError(f"expected {2 * n} moment tensors, found {len(arrays)}")
    return AdamState(
        lr=float(manifest["lr"]),
        beta1=float(manifest["beta1"]),
        beta2=float(manifest["beta2"]),
        eps=float(manifest["eps"]),
        step=int(manifest["step"]),
        m=arrays[:n],
        v=arrays[n:],
    )


# --- losses -----------------------------------------------------------------


def _net_input(lr, noise):
    if noise is None:
        return lr
    return np.concatenate([lr, noise.astype(lr.dtype)], axis=0)


def sres_loss(model, batch):
    """Negative mean SSIM of the network output against the target.

    ``batch`` is a list of (lr, target, noise) triples; noise may be None.
    Returns (loss, grads) with grads ordered like ``model.parameters()``.
    """
    if not batch:
        raise DimensionError("empty batch")
    total = zero_param_grads(model)
    loss = 0.0
    for lr, target, noise in batch:
        out, tape = forward_tape(model, _net_input(lr, noise))
        value, grad_out = ssim_and_grad(out, target)
        loss -= value / len(batch)
        layer_grads, _ = backward(model, tape, -grad_out / grad_out.dtype.type(len(batch)))
        accumulate_grads(total, model, layer_grads)
    return loss, total


@dataclass
class GanLossConfig:
    """Knobs of the two-player losses; see the module docstring."""

    lambda_gp: float = 10.0
    lambda_down: float = 100.0
    delta_metric: str = "mse"  # or "one_minus_ssim"
    clip_bound: float = 0.01
    factor: tuple = (2, 2)  # downscale used by the consistency term

    def __post_init__(self):
        if self.lambda_down < 0:
            raise ValueError("lambda_down must be >= 0")
        if self.clip_bound <= 0:
            raise ValueError("clip_bound must be > 0")
        if self.delta_metric not in ("mse", "one_minus_ssim"):
            raise ValueError(f"bad delta_metric {self.delta_metric!r}")


def _delta_and_grad(metric, lr, down):
    """Delta(lr, down) and its gradient with respect to ``down``."""
    if metric == "mse":
        value = mse(lr, down)
        grad = (2.0 / down.size) * (down.astype(np.float64) - lr.astype(np.float64))
        return value, grad.astype(down.dtype)
    value, grad = ssim_and_grad(down, lr)
    return 1.0 - value, -grad


@dataclass
class WganStep:
    loss_d: float
    loss_g: float
    gp_value: float
    consistency: float
    d_grads: list = None
    g_grads: list = None


def wgan_losses(gen_system, disc, batch, cfg, rng, need_d=True, need_g=True):
    """One evaluation of the two-player losses on a batch.

    ``batch`` is a list of (hr, lr) pairs; the generator runs on the lr
    side with noise drawn from ``rng``.  Loss values (including the
    gradient-penalty term) are always computed; parameter gradients for
    the critic and the generator are produced on demand.
    """
    if not batch:
        raise DimensionError("empty batch")
    n = len(batch)
    d_total = zero_param_grads(disc) if need_d else None
    g_total = (
        {name: zero_param_grads(net) for name, net in gen_system.nets.items()}
        if need_g
        else None
    )
    d_fake_sum = d_real_sum = gp_sum = cons_sum = 0.0
    mx, my = cfg.factor
    for hr, lr in batch:
        fake, gen_tapes = gen_system.forward_gan(lr, rng)
        out_f, tape_f = forward_tape(disc, fake)
        out_r, tape_r = forward_tape(disc, hr)
        d_fake = float(out_f[0, 0, 0])
        d_real = float(out_r[0, 0, 0])
        d_fake_sum += d_fake
        d_real_sum += d_real

        # gradient-penalty value at the epsilon-mixed sample
        eps = hr.dtype.type(rng.random())
        mixed = eps * hr + (hr.dtype.type(1) - eps) * fake
        out_m, tape_m = forward_tape(disc, mixed)
        one = np.ones_like(out_m)
        _, input_grad = backward(disc, tape_m, one)
        norm = float(np.sqrt(np.sum(input_grad.astype(np.float64) ** 2)))
        gp_sum += (norm - 1.0) ** 2

        down = area_downscale(fake, mx, my)
        delta, delta_grad = _delta_and_grad(cfg.delta_metric, lr, down)
        cons_sum += delta

        if need_d:
            # clipped-weight objective: mean D(fake) - mean D(real)
            lg_f, _ = backward(disc, tape_f, one / one.dtype.type(n))
            accumulate_grads(d_total, disc, lg_f)
            lg_r, _ = backward(disc, tape_r, one / one.dtype.type(n))
            accumulate_grads(d_total, disc, lg_r, scale=-1.0)
        if need_g:
            # -mean D(fake): critic pulled back to its input, then through G
            _, g_rgb = backward(disc, tape_f, -one / one.dtype.type(n))
            g_rgb = g_rgb + (
                cfg.lambda_down / n
            ) * area_downscale_adjoint(delta_grad, mx, my).astype(g_rgb.dtype)
            gen_system.backward_gan(gen_tapes, g_rgb, g_total)

    gp_value = gp_sum / n
    consistency = cons_sum / n
    loss_d = (d_fake_sum - d_real_sum) / n + cfg.lambda_gp * gp_value
    loss_g = -d_fake_sum / n + cfg.lambda_down * consistency
    return WganStep(loss_d, loss_g, gp_value, consistency, d_total, g_total)


# --- datasets ---------------------------------------------------------------


@dataclass
class PatchDataset:
    """Image list plus the patch geometry used for sampling.

    HR patches are square crops of ``hr_patch`` pixels (must be divisible
    by the upscale factor); the LR side of each pair is the exact area
    downscale of the HR crop.
    """

    images: list
    hr_patch: int
    factor: tuple = (2, 2)

    def __post_init__(self):
        mx, my = self.factor
        if self.hr_patch % mx or self.hr_patch % my:
            raise DimensionError(
                f"patch size {self.hr_patch} not divisible by factor {self.factor}"
            )
        usable = []
        for i, img in enumerate(self.images):
            if img.ndim != 3:
                raise DimensionError(f"image {i} is not a (c, h, w) array")
            if img.shape[1] < self.hr_patch or img.shape[2] < self.hr_patch:
                warnings.warn(
                    f"image {i} ({img.shape[1]}x{img.shape[2]}) smaller than "
                    f"patch {self.hr_patch}, skipping",
                    stacklevel=2,
                )
                continue
            usable.append(img)
        if not usable:
            raise DimensionError("no image is large enough for the patch size")
        self.images = usable


def sample_patches(dataset, n, seed):
    """Draw ``n`` random (hr, lr) patch pairs; deterministic per seed."""
    rng = seeded_rng(seed)
    mx, my = dataset.factor
    out = []
    for _ in range(n):
        img = dataset.images[int(rng.integers(len(dataset.images)))]
        r = int(rng.integers(img.shape[1] - dataset.hr_patch + 1))
        c = int(rng.integers(img.shape[2] - dataset.hr_patch + 1))
        hr = img[:, r : r + dataset.hr_patch, c : c + dataset.hr_patch].copy()
        out.append((hr, area_downscale(hr, mx, my)))
    return out


def check_finite(step, **values):
    for name, value in values.items():
        if not np.isfinite(value):
            raise NumericError(f"non-finite {name}={value} at step {step}")


# --- loops ------------------------------------------------------------------


@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int = 20
    lr: float = 1e-3
    seed: int = 0
    n_critic: int = 1  # extra critic updates per generator update (hres)


def train_sres(system, dataset, cfg, adam_states=None, start_step=0, on_record=None):
    """Deterministic-upscaler training: -SSIM loss, one Adam stream per network.

    All randomness (patch choice, noise) derives from ``(seed, step)``, so
    resuming from ``start_step`` with saved parameters and Adam state
    reproduces an uninterrupted run bit for bit.
    """
    if adam_states is None:
        adam_states = {
            name: init_adam(net.parameters(), cfg.lr) for name, net in system.nets.items()
        }
    records = []
    for step in range(start_step, start_step + cfg.steps):
        noise_rng = seeded_rng([cfg.seed, step, 0])
        pairs = sample_patches(dataset, cfg.batch_size, seed=[cfg.seed, step, 1])
        batches = {name: [] for name in system.nets}
        for hr, lr in pairs:
            for name, triple in system.training_examples(hr, lr, noise_rng).items():
                batches[name].append(triple)
        record = {"step": step}
        total = 0.0
        for name, net in system.nets.items():
            loss, grads = sres_loss(net, batches[name])
            adam_step(net.parameters(), grads, adam_states[name])
            record[f"loss_{name}"] = loss
            total += loss
        record["loss"] = total
        check_finite(step, **{k: v for k, v in record.items() if k != "step"})
        records.append(record)
        if on_record:
            on_record(record)
    return adam_states, records


def train_hres(
    system,
    disc,
    dataset,
    cfg,
    gan_cfg,
    adam_g=None,
    adam_d=None,
    start_step=0,
    on_record=None,
):
    """Adversarial training: alternating critic and generator updates.

    Each iteration performs ``n_critic`` critic updates (with weight
    clipping) followed by one generator update; the gradient-penalty and
    downscale-consistency values are logged every iteration.
    """
    if adam_g is None:
        adam_g = {
            name: init_adam(net.parameters(), cfg.lr) for name, net in system.nets.items()
        }
    if adam_d is None:
        adam_d = init_adam(disc.parameters(), cfg.lr)
    records = []
    for step in range(start_step, start_step + cfg.steps):
        noise_rng = seeded_rng([cfg.seed, step, 2])
        loss_d = gp = None
        for j in range(cfg.n_critic):
            pairs = sample_patches(dataset, cfg.batch_size, seed=[cfg.seed, step, 10 + j])
            res = wgan_losses(
                system, disc, pairs, gan_cfg, noise_rng, need_d=True, need_g=False
            )
            adam_step(disc.parameters(), res.d_grads, adam_d)
            clip_params(disc.parameters(), gan_cfg.clip_bound)
            loss_d, gp = res.loss_d, res.gp_value
        pairs = sample_patches(dataset, cfg.batch_size, seed=[cfg.seed, step, 20])
        res_g = wgan_losses(
            system, disc, pairs, gan_cfg, noise_rng, need_d=False, need_g=True
        )
        for name, net in system.nets.items():
            adam_step(net.parameters(), res_g.g_grads[name], adam_g[name])
        record = {
            "step": step,
            "loss_d": loss_d,
            "loss_g": res_g.loss_g,
            "gp": gp,
            "consistency": res_g.consistency,
        }
        check_finite(step, **{k: v for k, v in record.items() if k != "step"})
        records.append(record)
        if on_record:
            on_record(record)
    return adam_g, adam_d, records

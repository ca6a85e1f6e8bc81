"""Command-line surface: train, upscale, analyze, metrics.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
failure (a NaN anywhere aborts the run).
"""

import argparse
import glob
import json
import os
import sys

import numpy as np

from . import netpbm
from .analysis import (
    backward_analysis,
    forward_analysis,
    parse_coords,
    record_trace,
    render_filter_atlas,
)
from .backend import active_backend
from .container import dtype_code, write_container
from .errors import MuxscaleError, NumericError
from .metrics import psnr, ssim
from .netgraph import load_model, save_model
from .resample import bicubic_upscale, rgb_to_ycbcr
from .systems import (
    build_discriminator,
    build_system,
    config_from_dict,
    evaluate_sres,
    load_system,
    save_system,
)
from .tensor import seeded_rng
from .training import (
    GanLossConfig,
    TrainConfig,
    load_adam,
    PatchDataset,
    save_adam,
    train_hres,
    train_sres,
)


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that exits with code 1 on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser():
    p = _Parser(prog="muxscale", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train an upscaling system on a folder of images")
    t.add_argument("--config", required=True, help="system config JSON")
    t.add_argument("--data", required=True, help="directory of PPM/PGM images")
    t.add_argument("--mode", required=True, choices=("sres", "hres"))
    t.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    t.add_argument("--out", required=True, help="checkpoint directory")
    t.add_argument("--steps", type=int, default=1000)
    t.add_argument("--batch", type=int, default=20)
    t.add_argument("--lr", type=float, default=None, help="default 1e-3 sres, 1e-4 hres")
    t.add_argument("--patch", type=int, default=32, help="HR patch size")
    t.add_argument("--val-images", type=int, default=0, help="images held out for eval")
    t.add_argument("--log-every", type=int, default=50)
    t.add_argument("--n-critic", type=int, default=1)
    t.add_argument("--lambda-gp", type=float, default=10.0)
    t.add_argument("--lambda-down", type=float, default=100.0)
    t.add_argument("--delta", choices=("mse", "one_minus_ssim"), default="mse")
    t.add_argument("--clip", type=float, default=0.01, help="critic weight clip bound")
    t.add_argument("--resume", action="store_true", help="continue from --out")
    t.set_defaults(func=_cmd_train)

    u = sub.add_parser("upscale", help="upscale one image")
    u.add_argument("--model", default=None, help="checkpoint directory")
    u.add_argument("--in", dest="inp", required=True)
    u.add_argument("--out", required=True)
    u.add_argument("--noise-seed", type=int, default=0)
    u.add_argument("--method", choices=("network", "bicubic"), default="network")
    u.add_argument("--factor", default=None, help="MXxMY for --method bicubic without a model")
    u.set_defaults(func=_cmd_upscale)

    a = sub.add_parser("analyze", help="extract effective filters at a probe input")
    a.add_argument("--model", required=True, help="checkpoint directory or .muxs file")
    a.add_argument("--in", dest="inp", required=True, help="probe image")
    a.add_argument("--mode", required=True, choices=("forward", "backward"))
    a.add_argument(
        "--coords",
        required=True,
        help="'f,r,c;f,r,c;...' or 'stride:SRxSC' (feature 0)",
    )
    a.add_argument("--atlas", required=True, help="output PGM for the filter atlas")
    a.add_argument("--raw", default=None, help="optional raw filter dump (MUXS)")
    a.add_argument("--net", default="luma", help="which network of a system checkpoint")
    a.add_argument("--noise-seed", type=int, default=0)
    a.add_argument("--feature", type=int, default=0, help="feature plane shown in tiles")
    a.add_argument("--tile-size", type=int, default=None)
    a.add_argument("--tiles-per-row", type=int, default=None)
    a.add_argument("--normalization", choices=("atlas", "tile"), default="atlas")
    a.set_defaults(func=_cmd_analyze)

    m = sub.add_parser("metrics", help="PSNR and SSIM between two images")
    m.add_argument("--ref", required=True)
    m.add_argument("--test", required=True)
    m.set_defaults(func=_cmd_metrics)
    return p


def _load_images(dirpath):
    paths = sorted(
        glob.glob(os.path.join(dirpath, "*.ppm")) + glob.glob(os.path.join(dirpath, "*.pgm"))
    )
    if not paths:
        raise MuxscaleError(f"no .ppm/.pgm images found in {dirpath}")
    images = []
    for path in paths:
        img = netpbm.read_image(path)
        if img.shape[0] == 1:
            img = np.repeat(img, 3, axis=0)
        images.append(img)
    return images


def _check_finite_output(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"NaN/Inf detected in {what}")


def _cmd_train(args):
    with open(args.config) as f:
        try:
            cfg = config_from_dict(json.load(f))
        except json.JSONDecodeError as exc:
            raise MuxscaleError(f"malformed config JSON: {exc}") from None
    if args.seed is not None:
        cfg.seed = args.seed
    images = _load_images(args.data)
    if args.val_images >= len(images):
        raise MuxscaleError(
            f"cannot hold out {args.val_images} of {len(images)} images"
        )
    val = images[len(images) - args.val_images :] if args.val_images else []
    train_images = images[: len(images) - args.val_images]
    dataset = PatchDataset(train_images, args.patch, cfg.factor)

    out = args.out
    os.makedirs(out, exist_ok=True)
    lr = args.lr if args.lr is not None else (1e-3 if args.mode == "sres" else 1e-4)
    tcfg = TrainConfig(
        steps=args.steps,
        batch_size=args.batch,
        lr=lr,
        seed=cfg.seed,
        n_critic=args.n_critic,
    )

    start_step = 0
    adam_states = adam_d = disc = None
    if args.resume:
        with open(os.path.join(out, "state.json")) as f:
            state = json.load(f)
        start_step = int(state["next_step"])
        system = load_system(out)
        adam_states = {
            name: load_adam(os.path.join(out, f"{name}.adam")) for name in system.nets
        }
        if args.mode == "hres":
            disc = load_model(os.path.join(out, "disc.muxs"))
            adam_d = load_adam(os.path.join(out, "disc.adam"))
    else:
        system = build_system(cfg)
        if args.mode == "hres":
            disc = build_discriminator(cfg)

    log_path = os.path.join(out, "log.jsonl")
    log_file = open(log_path, "a" if args.resume else "w")

    def on_record(rec):
        if rec["step"] % args.log_every == 0 or rec["step"] == start_step + args.steps - 1:
            log_file.write(json.dumps(rec, sort_keys=True) + "\n")
            log_file.flush()

    try:
        if args.mode == "sres":
            adam_states, _ = train_sres(
                system, dataset, tcfg, adam_states, start_step, on_record
            )
        else:
            gan_cfg = GanLossConfig(
                lambda_gp=args.lambda_gp,
                lambda_down=args.lambda_down,
                delta_metric=args.delta,
                clip_bound=args.clip,
                factor=cfg.factor,
            )
            adam_states, adam_d, _ = train_hres(
                system, disc, dataset, tcfg, gan_cfg, adam_states, adam_d, start_step, on_record
            )
        if val:
            net_ssim, bicubic_ssim = evaluate_sres(system, val, noise_seed=cfg.seed)
            rec = {
                "step": start_step + args.steps,
                "eval_ssim_net": net_ssim,
                "eval_ssim_bicubic": bicubic_ssim,
            }
            log_file.write(json.dumps(rec, sort_keys=True) + "\n")
    finally:
        log_file.close()

    save_system(system, out)
    for name, state in adam_states.items():
        save_adam(state, os.path.join(out, f"{name}.adam"))
    if disc is not None:
        save_model(disc, os.path.join(out, "disc.muxs"))
        save_adam(adam_d, os.path.join(out, "disc.adam"))
    with open(os.path.join(out, "state.json"), "w") as f:
        json.dump(
            {"next_step": start_step + args.steps, "mode": args.mode, "seed": cfg.seed},
            f,
            sort_keys=True,
        )
    print(f"trained {args.steps} steps ({args.mode}), checkpoint in {out}")
    return 0


def _parse_factor(text):
    try:
        mx, my = (int(v) for v in text.lower().split("x", 1))
        if mx < 1 or my < 1:
            raise ValueError
        return mx, my
    except ValueError:
        raise MuxscaleError(f"bad factor {text!r}, expected MXxMY") from None


def _cmd_upscale(args):
    img = netpbm.read_image(args.inp)
    if args.method == "bicubic":
        if args.model:
            mx, my = load_system(args.model).factor
        elif args.factor:
            mx, my = _parse_factor(args.factor)
        else:
            raise MuxscaleError("--method bicubic needs --model or --factor")
        out = bicubic_upscale(img, mx, my)
    else:
        if not args.model:
            raise MuxscaleError("--method network needs --model")
        system = load_system(args.model)
        if img.shape[0] == 1:
            img = np.repeat(img, 3, axis=0)
        out = system.upscale(img, seeded_rng(args.noise_seed))
    _check_finite_output(out, "upscaled image")
    netpbm.write_image(args.out, np.clip(out, 0.0, 1.0))
    print(f"wrote {args.out} ({out.shape[2]}x{out.shape[1]})")
    return 0


def _probe_input(args, system, model):
    img = netpbm.read_image(args.inp)
    nc = model.input_spec.noise_channels
    color = model.input_spec.channels - nc
    if system is not None and args.net == "chroma":
        if img.shape[0] != 3:
            raise MuxscaleError("chroma analysis needs an RGB probe image")
        img = rgb_to_ycbcr(img)[1:3]
    elif img.shape[0] == 1 and color == 3:
        img = np.repeat(img, 3, axis=0)
    elif img.shape[0] == 3 and color == 1:
        img = rgb_to_ycbcr(img)[0:1]
    if img.shape[0] != color:
        raise MuxscaleError(
            f"model expects {color} probe channels, image has {img.shape[0]}"
        )
    if nc:
        rng = seeded_rng(args.noise_seed)
        noise = rng.normal(0.0, 1.0, (nc,) + img.shape[1:]).astype(img.dtype)
        img = np.concatenate([img, noise], axis=0)
    return img


def _cmd_analyze(args):
    if os.path.isdir(args.model):
        system = load_system(args.model)
        if args.net not in system.nets:
            raise MuxscaleError(
                f"system has networks {sorted(system.nets)}, not {args.net!r}"
            )
        model = system.nets[args.net]
    else:
        system = None
        model = load_model(args.model)
    probe = _probe_input(args, system, model)
    trace = record_trace(model, probe)

    if args.mode == "forward":
        coords = parse_coords(args.coords, probe.shape)
        eff = forward_analysis(model, trace, coords)
        which = "columns"
    else:
        coords = parse_coords(args.coords, trace.output_shape)
        eff = backward_analysis(model, trace, coords)
        which = "rows"

    b = eff.b_eff.astype(np.float64)
    print(
        f"b_eff: mean={b.mean():.6g} std={b.std():.6g} "
        f"min={b.min():.6g} max={b.max():.6g}"
    )
    atlas = render_filter_atlas(
        eff,
        which=which,
        tiles_per_row=args.tiles_per_row,
        normalization=args.normalization,
        feature=args.feature,
        tile_size=args.tile_size,
    )
    netpbm.write_image_u8(args.atlas, atlas)
    print(f"wrote {args.atlas} ({atlas.shape[1]}x{atlas.shape[0]}, {len(coords)} tiles)")

    if args.raw:
        store = eff.columns if which == "columns" else eff.rows
        names = [f"{which[:-1]}_{f}_{r}_{c}" for f, r, c in sorted(store)]
        arrays = [store[c] for c in sorted(store)] + [eff.b_eff]
        names.append("b_eff")
        manifest = {
            "kind": "tensors",
            "tensors": [
                {"name": n, "shape": list(a.shape), "dtype": dtype_code(a.dtype)}
                for n, a in zip(names, arrays)
            ],
        }
        write_container(args.raw, manifest, arrays)
        print(f"wrote {args.raw}")
    return 0


def _cmd_metrics(args):
    ref = netpbm.read_image(args.ref)
    test = netpbm.read_image(args.test)
    p = psnr(ref, test)
    s = ssim(ref, test)
    print("PSNR: inf dB" if np.isinf(p) else f"PSNR: {p:.4f} dB")
    print(f"SSIM: {s:.4f}")
    return 0


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args) or 0
    except NumericError as exc:
        print(f"muxscale: numeric failure: {exc}", file=sys.stderr)
        return 3
    except (MuxscaleError, OSError) as exc:
        print(f"muxscale: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

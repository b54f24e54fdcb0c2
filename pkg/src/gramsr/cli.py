"""Command-line entry point: ``gramsr {synth,transfer,sr,sr-local,nnf,gradcheck}``.

Exit codes: 0 success, 1 runtime or validation failure, 2 bad flags.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time

import numpy as np

from . import featurenet as fn
from . import gradcheck
from . import losses
from . import masks as masks_mod
from . import optimizer as opt
from .imagecore import (crop_to_multiple, default_sigma, downsample, load_image, save_image)
from .patchmatch import PatchMatchParams, compute_nnf, offset_visualization, save_nnf

log = logging.getLogger("gramsr")


def _layer_list(text: str) -> list[str]:
    names = [t.strip() for t in text.split(",") if t.strip()]
    for n in names:
        if n not in fn.LAYER_INDEX:
            raise argparse.ArgumentTypeError(f"unknown layer {n!r}")
    return names


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    return h, w


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _add_optim_args(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--weights", help="GMW1 weight file")
    src.add_argument("--random-weights", type=int, metavar="SEED", help="use seeded random weights")
    p.add_argument("--style", required=True, help="example/style image")
    p.add_argument("--out", required=True, help="output image (.png or .pgm)")
    p.add_argument("--trace", help="loss trace CSV")
    p.add_argument("--alpha", type=float, default=opt.DEFAULT_ALPHA)
    p.add_argument("--beta", type=float, default=opt.DEFAULT_BETA)
    p.add_argument("--iterations", type=_positive_int)
    p.add_argument("--lr", type=float, default=opt.DEFAULT_LR)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--style-layers", type=_layer_list, default=list(losses.DEFAULT_STYLE_LAYERS))
    p.add_argument("--style-weights", type=_float_list, help="per-layer weights (default all 1)")
    p.add_argument("--pooling", choices=("avg", "max"), default="avg")
    p.add_argument("--precision", choices=("float32", "float64"), default="float32")


def _add_sr_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=True, help="low-resolution input image")
    p.add_argument("--factor", type=_positive_int, default=3)
    p.add_argument("--sigma", type=float, help="blur sigma (default 0.5*factor, 0 disables blur)")
    p.add_argument("--init-noise", type=float, default=0.01)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gramsr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="texture synthesis from noise")
    _add_optim_args(p)
    p.add_argument("--size", type=_size, help="output HxW (default: style size)")

    p = sub.add_parser("transfer", help="content + style transfer")
    _add_optim_args(p)
    p.add_argument("--content", required=True)
    p.add_argument("--content-layer", default=losses.DEFAULT_CONTENT_LAYER)

    p = sub.add_parser("sr", help="super-resolution with a global Gram prior")
    _add_optim_args(p)
    _add_sr_args(p)

    p = sub.add_parser("sr-local", help="super-resolution with masked Gram priors")
    _add_optim_args(p)
    _add_sr_args(p)
    p.add_argument("--mask-x", action="append", default=[], help="output-side mask (repeatable)")
    p.add_argument("--mask-s", action="append", default=[], help="style-side mask (repeatable)")
    p.add_argument("--auto-masks", action="store_true", help="derive masks from a PatchMatch field")
    p.add_argument("--cell", type=_positive_int, help="cell size (default 8*factor)")
    p.add_argument("--stamp", type=_positive_int, help="stamp size (default patch*factor)")
    p.add_argument("--dilate", type=int, help="dilation radius (default factor)")
    p.add_argument("--patch", type=int, default=7)
    p.add_argument("--pm-iters", type=_positive_int, default=5)

    p = sub.add_parser("nnf", help="compute a PatchMatch field between two images")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True, help="NNF1 dump")
    p.add_argument("--vis", help="offset visualization image")
    p.add_argument("--patch", type=int, default=7)
    p.add_argument("--pm-iters", type=_positive_int, default=5)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sabotage-flip", action="store_true", help=argparse.SUPPRESS)
    return parser


# --------------------------------------------------------------------------

_MODE_OF = {"synth": "synth", "transfer": "transfer", "sr": "sr_global", "sr-local": "sr_local"}


def _resolve_defaults(args) -> None:
    """Fill in defaults that depend on other flags, so they are echoed too."""
    if getattr(args, "iterations", 0) is None:
        args.iterations = opt.DEFAULT_ITERATIONS[_MODE_OF[args.command]]
    if getattr(args, "factor", None) is not None and args.sigma is None:
        args.sigma = default_sigma(args.factor)
    if args.command == "sr-local":
        args.cell = args.cell or 8 * args.factor
        args.stamp = args.stamp or args.patch * args.factor
        args.dilate = args.factor if args.dilate is None else args.dilate


def _print_settings(args) -> None:
    items = {k: v for k, v in sorted(vars(args).items())}
    print("gramsr " + " ".join(f"{k}={v}" for k, v in items.items()), file=sys.stderr)


def _weights(args) -> fn.NetworkWeights:
    if args.weights is not None:
        return fn.load_weights(args.weights)
    return fn.init_random_weights(args.random_weights)


def _style_layers(args) -> dict[str, float]:
    ws = args.style_weights or [1.0] * len(args.style_layers)
    if len(ws) != len(args.style_layers):
        raise ValueError(f"{len(args.style_layers)} style layers but {len(ws)} weights")
    return dict(zip(args.style_layers, ws))


def _finish(args, cfg: opt.ObjectiveConfig, objective: opt.Objective | None = None):
    iterations = args.iterations
    obj = objective or opt.Objective(cfg)  # validates sizes before any optimization
    t0 = time.time()
    x, trace = opt.run(cfg, iterations, lr=args.lr, seed=args.seed, objective=obj)
    log.info("%d iterations in %.1fs, final loss %.6g", iterations, time.time() - t0, trace[-1].total)
    save_image(x, args.out)
    if args.trace:
        opt.write_trace(trace, args.trace)
    return x, trace


def cmd_synth(args) -> int:
    weights = _weights(args)
    style = load_image(args.style)
    cfg = opt.ObjectiveConfig("synth", weights, style=style, out_shape=args.size or style.shape,
                              alpha=args.alpha, beta=args.beta, style_layers=_style_layers(args),
                              pooling=args.pooling, dtype=args.precision)
    _, trace = _finish(args, cfg)
    print(f"style loss initial={trace[0].style:.6g} final={trace[-1].style:.6g}", file=sys.stderr)
    return 0


def cmd_transfer(args) -> int:
    weights = _weights(args)
    cfg = opt.ObjectiveConfig("transfer", weights, style=load_image(args.style),
                              content=load_image(args.content), alpha=args.alpha, beta=args.beta,
                              style_layers=_style_layers(args), content_layer=args.content_layer,
                              pooling=args.pooling, dtype=args.precision)
    _finish(args, cfg)
    return 0


def _sr_inputs(args):
    f = args.factor
    c = load_image(args.input)
    style = crop_to_multiple(load_image(args.style), f)
    return c, style, args.sigma


def _report_residual(cfg: opt.ObjectiveConfig, x) -> None:
    r = downsample(x, cfg.factor, cfg.kernel) - cfg.lr_input
    print(f"residual_rmse={math.sqrt(float(np.mean(r * r))):.6f}", file=sys.stderr)


def cmd_sr(args) -> int:
    weights = _weights(args)
    c, style, sigma = _sr_inputs(args)
    cfg = opt.ObjectiveConfig("sr_global", weights, style=style, lr_input=c, factor=args.factor,
                              sigma=sigma, alpha=args.alpha, beta=args.beta,
                              style_layers=_style_layers(args), init_noise=args.init_noise,
                              pooling=args.pooling, dtype=args.precision)
    x, _ = _finish(args, cfg)
    _report_residual(cfg, x)
    return 0


def cmd_sr_local(args) -> int:
    f = args.factor
    if args.auto_masks == bool(args.mask_x or args.mask_s):
        raise ValueError("give either --auto-masks or --mask-x/--mask-s pairs")
    weights = _weights(args)
    c, style, sigma = _sr_inputs(args)
    out_h, out_w = c.shape[0] * f, c.shape[1] * f
    cfg = opt.ObjectiveConfig("sr_global", weights, style=style, lr_input=c, factor=f, sigma=sigma)

    if args.auto_masks:
        params = PatchMatchParams(patch_size=args.patch, iterations=args.pm_iters, rng_seed=args.seed)
        style_lr = downsample(style, f, cfg.kernel)
        nnf = compute_nnf(c, style_lr, params)
        mask_set = masks_mod.generate_patchmatch_masks(
            nnf, f, out_h, out_w, style.shape[0], style.shape[1],
            cell_size=args.cell, stamp_size=args.stamp, dilation_radius=args.dilate)
    else:
        mask_set = masks_mod.load_manual_masks(args.mask_x, args.mask_s, out_h, out_w,
                                               style.shape[0], style.shape[1], args.dilate)
    empty = sum(1 for _, ms in mask_set if not ms.any())
    print(f"mask pairs K={mask_set.k} provenance={mask_set.provenance} "
          f"borrowed={len(mask_set.borrowed)} empty_style_masks={empty}", file=sys.stderr)

    cfg = opt.ObjectiveConfig("sr_local", weights, style=style, lr_input=c, factor=f, sigma=sigma,
                              masks=mask_set, alpha=args.alpha, beta=args.beta,
                              style_layers=_style_layers(args), init_noise=args.init_noise,
                              pooling=args.pooling, dtype=args.precision)
    x, _ = _finish(args, cfg)
    _report_residual(cfg, x)
    return 0


def cmd_nnf(args) -> int:
    src = load_image(args.source)
    tgt = load_image(args.target)
    nnf = compute_nnf(src, tgt, PatchMatchParams(patch_size=args.patch, iterations=args.pm_iters,
                                                 rng_seed=args.seed))
    save_nnf(nnf, args.out)
    if args.vis:
        save_image(offset_visualization(nnf, tgt.shape), args.vis)
    print(f"nnf {nnf.height}x{nnf.width} mean distance {nnf.distances.mean():.6g}", file=sys.stderr)
    return 0


def cmd_gradcheck(args) -> int:
    if args.sabotage_flip:
        with fn.sabotage_kernel_flip():
            results = gradcheck.run_all(args.seed)
    else:
        results = gradcheck.run_all(args.seed)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.ok]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        print("failing: " + "; ".join(failed), file=sys.stderr)
        return 1
    return 0


COMMANDS = {"synth": cmd_synth, "transfer": cmd_transfer, "sr": cmd_sr, "sr-local": cmd_sr_local,
            "nnf": cmd_nnf, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    _resolve_defaults(args)
    _print_settings(args)
    try:
        return COMMANDS[args.command](args)
    except (ValueError, KeyError, OSError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

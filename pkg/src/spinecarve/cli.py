"""Command-line interface: ``spinecarve {train,segment,phantom,loo,evaluate}``.

Exit codes: 0 success, 2 I/O, format or usage error, 3 image/model dimension
mismatch, 4 segmentation stopped at the iteration limit (results still
written), 5 invalid phantom spec.
"""

import argparse
import csv
import logging
import os
import sys

import numpy as np

from . import config as runconfig
from . import grid
from .errors import ConfigError, DimensionMismatch, ImageFormatError, InvalidSpec, ModelFormatError, SpinecarveError
from .evolution import METHODS, baseline_config, segment_two_stage
from .harness import emit_report, overlay, run_loo
from .imageio import (dataset_dirs, extension_for, load_image, load_mask, match_pairs, save_image, save_mask,
                      write_pgm, write_raw)
from .model import TrainingSet, align_check, build_model, load_model, save_model
from .phantoms import PhantomSpec, generate

EXIT_OK = 0
EXIT_IO = 2
EXIT_DIMS = 3
EXIT_NOT_CONVERGED = 4
EXIT_SPEC = 5

THREADS_ENV = "SPINECARVE_THREADS"
CONFIG_ECHO = "config.json"

logger = logging.getLogger("spinecarve")


class CliError(Exception):
    def __init__(self, message, code=EXIT_IO):
        super().__init__(message)
        self.code = code


def _threads_default():
    value = os.environ.get(THREADS_ENV)
    if value is None or value == "":
        return None
    try:
        return int(value)
    except ValueError:
        raise CliError(f"{THREADS_ENV} must be an integer, got {value!r}") from None


def _effective_config(args):
    cfg = runconfig.load(args.config) if args.config else runconfig.RunConfig()
    threads = args.threads if args.threads is not None else _threads_default()
    evolution = {
        "w_data": args.w_data,
        "w_context": args.w_context,
        "w_shape": args.w_shape,
        "step_size": args.step_size,
        "max_iters_stage1": args.max_iters,
        "max_iters_stage2": args.max_iters,
        "tol": args.tol,
        "redistance_every": args.redistance_every,
    }
    bandwidths = {
        "intensity": args.intensity_bandwidth,
        "spatial": args.spatial_bandwidth,
        "shape": args.shape_bandwidth,
        "location_stride": args.location_stride,
    }
    methods = None
    if getattr(args, "methods", None):
        methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    return runconfig.with_overrides(
        cfg, evolution, bandwidths,
        seed=args.seed, threads=threads, method=getattr(args, "method", None), methods=methods,
    )


def _echo_config(cfg, out_dir):
    runconfig.save(cfg, os.path.join(out_dir, CONFIG_ECHO))


def _load_training_set(images_dir, masks_dir=None):
    if masks_dir is None:
        images_dir, masks_dir = dataset_dirs(images_dir)
    pairs = match_pairs(images_dir, masks_dir)
    ids, images, masks = [], [], []
    for stem, image_path, mask_path in pairs:
        ids.append(stem)
        images.append(load_image(image_path))
        masks.append(load_mask(mask_path))
    try:
        return TrainingSet(images, masks, ids)
    except DimensionMismatch as exc:
        raise CliError(f"training data: {exc}", EXIT_DIMS) from None


def cmd_train(args):
    cfg = _effective_config(args)
    ts = _load_training_set(args.images, args.masks)
    align_check(ts)
    model = build_model(ts, cfg.bandwidths)
    out_dir = os.path.dirname(os.path.abspath(args.output))
    os.makedirs(out_dir, exist_ok=True)
    save_model(model, args.output)
    runconfig.save(cfg, args.output + ".config.json")
    print(f"images: {len(ts)}  dims: {'x'.join(map(str, ts.dims))}")
    print(f"foreground intensity samples: {model.intensity_fg.n_samples}")
    print(f"background intensity samples: {model.intensity_bg.n_samples}")
    print(f"intensity bandwidths: fg {model.intensity_fg.bandwidth:.6g}  bg {model.intensity_bg.bandwidth:.6g}")
    print(f"spatial bandwidth: {model.context_fg.bandwidth:.6g}")
    print(f"shape bandwidth: {model.shapes.bandwidth:.6g}")
    print(f"model written to {args.output}")
    return EXIT_OK


def _write_energy_csv(path, result):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["stage", "iteration", "energy"])
        for k, e in result.stage1.trace:
            writer.writerow([1, k, repr(float(e))])
        if result.stage2 is not None:
            for k, e in result.stage2.trace:
                writer.writerow([2, k, repr(float(e))])


def _write_overlay(out_dir, image, truth, mask):
    rendered = overlay(image, truth if truth is not None else np.zeros_like(mask), mask)
    if rendered.ndim == 2:
        write_pgm(os.path.join(out_dir, "overlay.pgm"), rendered)
        return
    for ax, name in enumerate("zyx"):
        plane = np.take(rendered, rendered.shape[ax] // 2, axis=ax)
        write_pgm(os.path.join(out_dir, f"overlay_{name}.pgm"), np.ascontiguousarray(plane))


def cmd_segment(args):
    cfg = _effective_config(args)
    image = load_image(args.image)
    model = load_model(args.model)
    if image.shape != tuple(model.dims):
        raise CliError(f"image {args.image} has dims {image.shape}, model expects {tuple(model.dims)}", EXIT_DIMS)
    truth = None
    if args.ground_truth:
        truth = load_mask(args.ground_truth)
        if truth.shape != image.shape:
            raise CliError(f"ground truth {args.ground_truth} has dims {truth.shape}, image has {image.shape}",
                           EXIT_DIMS)
    ecfg = baseline_config(cfg.method, cfg.evolution)
    result = segment_two_stage(image, model, ecfg, ground_truth=truth)
    os.makedirs(args.output, exist_ok=True)
    ext = extension_for(image.ndim)
    save_mask(os.path.join(args.output, "mask" + ext), result.mask)
    write_raw(os.path.join(args.output, "phi.mhd"), result.phi.astype("<f8"))
    _write_energy_csv(os.path.join(args.output, "energy.csv"), result)
    _write_overlay(args.output, image, truth, result.mask)
    _echo_config(cfg, args.output)
    final = result.energy_trace[-1][1]
    print(f"method: {cfg.method}")
    print(f"final energy: {final:.10g}")
    print(f"iterations: stage 1 {result.iters_stage1}, stage 2 {result.iters_stage2}")
    if result.dice is not None:
        print(f"dice: {result.dice:.6f}")
    if not all(result.converged):
        print("warning: stopped at the iteration limit before convergence", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_phantom(args):
    cfg = _effective_config(args)
    try:
        with open(args.spec, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise CliError(f"cannot read spec {args.spec}: {exc}") from None
    spec = PhantomSpec.from_json(text)
    if args.seed is not None:
        spec = spec.with_changes(seed=args.seed)
    ts = generate(spec)
    image_dir = os.path.join(args.output, "images")
    mask_dir = os.path.join(args.output, "masks")
    os.makedirs(image_dir, exist_ok=True)
    os.makedirs(mask_dir, exist_ok=True)
    ext = extension_for(len(spec.dims))
    for stem, image, mask in zip(ts.ids, ts.images, ts.masks):
        save_image(os.path.join(image_dir, stem + ext), image)
        save_mask(os.path.join(mask_dir, stem + "_mask" + ext), mask)
    with open(os.path.join(args.output, "spec.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(spec.to_json())
    _echo_config(cfg.replace(seed=spec.seed), args.output)
    print(f"wrote {len(ts)} image/mask pairs to {args.output}")
    return EXIT_OK


def cmd_loo(args):
    cfg = _effective_config(args)
    ts = _load_training_set(args.dataset)
    report = run_loo(ts, list(cfg.methods), cfg.evolution, cfg.bandwidths, threads=cfg.threads,
                     keep_predictions=not args.no_overlays)
    emit_report(report, args.output, ts if not args.no_overlays else None)
    _echo_config(cfg, args.output)
    with open(os.path.join(args.output, "summary.txt"), encoding="utf-8") as fh:
        print(fh.read(), end="")
    return EXIT_OK


def cmd_evaluate(args):
    a = load_mask(args.mask_a)
    b = load_mask(args.mask_b)
    if a.shape != b.shape:
        raise CliError(f"mask dims differ: {a.shape} vs {b.shape}", EXIT_DIMS)
    print(f"{grid.dice(a, b):.6f}")
    return EXIT_OK


def _add_common(p):
    p.add_argument("--config", metavar="FILE", help="JSON run configuration (flags override it)")
    p.add_argument("--seed", type=int, default=None,
                   help="seed for every random draw (default: config value, else 0)")
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker count, 0 = one per CPU (default: ${THREADS_ENV}, else config value, else 0)")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")


def _add_evolution(p):
    g = p.add_argument_group("evolution overrides (default: config value)")
    g.add_argument("--w-data", type=float, default=None, help="learned intensity weight (default 1.0)")
    g.add_argument("--w-context", type=float, default=None, help="context prior weight (default 1.0)")
    g.add_argument("--w-shape", type=float, default=None, help="shape prior weight (default 1.0)")
    g.add_argument("--step-size", type=float, default=None, help="time step upper bound (default 0.5)")
    g.add_argument("--max-iters", type=int, default=None, help="iteration limit per stage (default 500)")
    g.add_argument("--tol", type=float, default=None, help="label-flip fraction for convergence (default 1e-4)")
    g.add_argument("--redistance-every", type=int, default=None, help="redistance period (default 10)")


def _add_bandwidths(p):
    g = p.add_argument_group("bandwidth overrides (default: config value)")
    g.add_argument("--intensity-bandwidth", type=_bandwidth, default=None,
                   help="intensity kernel width or 'auto' (default auto)")
    g.add_argument("--spatial-bandwidth", type=_bandwidth, default=None,
                   help="location kernel width in voxels or 'auto' (default 2.0)")
    g.add_argument("--shape-bandwidth", type=_bandwidth, default=None,
                   help="shape kernel width or 'auto' (default auto)")
    g.add_argument("--location-stride", type=int, default=None,
                   help="subsample location samples every N voxels per axis (default 1)")


def _bandwidth(text):
    if text == "auto":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'auto', got {text!r}") from None


def build_parser():
    parser = argparse.ArgumentParser(
        prog="spinecarve",
        description="Level-set segmentation with learned intensity, context and shape priors.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("train", help="build a prior model from aligned image/mask pairs", formatter_class=fmt)
    p.add_argument("images", help="image directory, or a dataset with images/ and masks/")
    p.add_argument("masks", nargs="?", default=None, help="mask directory (default: next to the images)")
    p.add_argument("-o", "--output", required=True, help="model archive to write")
    _add_common(p)
    _add_evolution(p)
    _add_bandwidths(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("segment", help="segment one image with a trained model", formatter_class=fmt)
    p.add_argument("image", help="image file (.pgm or .mhd)")
    p.add_argument("model", help="model archive from 'train'")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--method", choices=METHODS, default=None, help="method to run (default: config value, full)")
    p.add_argument("--ground-truth", default=None, help="mask file; prints the Dice score")
    _add_common(p)
    _add_evolution(p)
    _add_bandwidths(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("phantom", help="generate a synthetic dataset from a JSON spec", formatter_class=fmt)
    p.add_argument("spec", help="phantom spec (JSON)")
    p.add_argument("-o", "--output", required=True, help="output dataset directory")
    _add_common(p)
    _add_evolution(p)
    _add_bandwidths(p)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("loo", help="leave-one-out comparison of methods", formatter_class=fmt)
    p.add_argument("dataset", help="dataset directory (images/ + masks/, or flat)")
    p.add_argument("-o", "--output", required=True, help="report directory")
    p.add_argument("--methods", default=None,
                   help=f"comma-separated methods (default: config value, {','.join(METHODS)})")
    p.add_argument("--no-overlays", action="store_true", help="skip overlay images")
    _add_common(p)
    _add_evolution(p)
    _add_bandwidths(p)
    p.set_defaults(func=cmd_loo)

    p = sub.add_parser("evaluate", help="Dice score between two mask files", formatter_class=fmt)
    p.add_argument("mask_a")
    p.add_argument("mask_b")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(getattr(args, "verbose", 0), 2)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except InvalidSpec as exc:
        print(f"error: invalid phantom spec: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except DimensionMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIMS
    except (OSError, ImageFormatError, ModelFormatError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SpinecarveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

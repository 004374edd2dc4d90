"""Command-line interface.

Subcommands: upscale (raise z-resolution of a stack), eval (skip-slice
scoring of reconstruction methods), prep (cut a large stack into
training-ready blocks), flow (pairwise flow estimation to .flo), and
synth (analytic test volumes).

Option precedence is explicit flag, then config file (--config, TOML or
JSON), then built-in default.  Thread count falls back to the
ZUP_THREADS environment variable.  Exit codes: 0 on success, 1 on
processing failures, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
from PIL import Image

from ._version import __version__
from .baseline import KernelSpec, interp_z
from .flow import FlowConfig, estimate_flow, write_flo
from .metrics import EVAL_METHODS, emit_report, render_table, run_skip_eval
from .synthetic import ramp_volume, sphere_volume, translating_disk_volume
from .viz import save_flow_image
from .volume import Volume, VolumeFormatError, crop_subvolumes, generate_triplets, read_volume, write_volume
from .warp import SynthesisConfig, upscale_volume

logger = logging.getLogger(__name__)

UPSCALE_METHODS = ("flow", "bicubic", "linear")


def _factor_arg(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"factor must be an integer, got {text!r}")
    if value < 2 or (value & (value - 1)) != 0 or value > 8:
        raise argparse.ArgumentTypeError(f"factor must be a power of two (2, 4 or 8), got {value}")
    return value


def _shape_arg(text: str) -> tuple[int, int, int]:
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected ZxHxW, got {text!r}")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integer extents in ZxHxW, got {text!r}")
    if any(d < 1 for d in dims):
        raise argparse.ArgumentTypeError(f"extents must be positive, got {text!r}")
    return dims


def _methods_arg(text: str) -> list[str]:
    methods = [m.strip() for m in text.split(",") if m.strip()]
    if not methods:
        raise argparse.ArgumentTypeError("at least one method is required")
    unknown = sorted(set(methods) - set(EVAL_METHODS))
    if unknown:
        raise argparse.ArgumentTypeError(f"unknown methods {unknown}, valid: {sorted(EVAL_METHODS)}")
    return methods


def _pair_arg(text: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}")
    try:
        return (float(parts[0]), float(parts[1]))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected numbers, got {text!r}")


def _threads_arg(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"threads must be an integer, got {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"threads must be >= 1, got {value}")
    return value


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise OSError(f"config file not found: {p}")
    if p.suffix.lower() == ".json":
        return json.loads(p.read_text())
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    with open(p, "rb") as fh:
        return tomllib.load(fh)


def _resolve(cli_value, config: dict, path: tuple, default):
    if cli_value is not None:
        return cli_value
    node = config
    for key in path:
        if not isinstance(node, dict) or key not in node:
            return default
        node = node[key]
    return node


def _flow_config(args, config: dict) -> FlowConfig:
    return FlowConfig(
        max_levels=int(_resolve(getattr(args, "levels", None), config, ("flow", "levels"), 7)),
        alpha=float(_resolve(getattr(args, "alpha", None), config, ("flow", "alpha"), 15.0)),
        iterations_per_level=int(_resolve(None, config, ("flow", "iterations"), 100)),
        warps_per_level=int(_resolve(None, config, ("flow", "warps"), 3)),
        convergence_epsilon=float(_resolve(None, config, ("flow", "epsilon"), 1e-4)),
    )


def _synthesis_config(args, config: dict) -> SynthesisConfig:
    fallback = _resolve(None, config, ("synth", "fallback_blend"), (0.5, 0.5))
    return SynthesisConfig(
        flow_config=_flow_config(args, config),
        split_mode=_resolve(None, config, ("synth", "split_mode"), "symmetric"),
        consistency_tolerance_px=float(_resolve(None, config, ("synth", "consistency_tolerance_px"), 1.0)),
        fallback_blend=tuple(fallback),
    )


def _threads(args, config: dict) -> int | None:
    value = getattr(args, "threads", None)
    if value is None:
        value = _resolve(None, config, ("run", "threads"), None)
    if value is None:
        env = os.environ.get("ZUP_THREADS", "").strip()
        if env:
            value = int(env)
    return None if value is None else int(value)


def _read_slice_image(path: str) -> np.ndarray:
    """Load a single 2-D image: PNG/JPEG via Pillow, else a depth-1 stack."""
    suffix = Path(path).suffix.lower()
    if suffix in (".png", ".jpg", ".jpeg"):
        with Image.open(path) as img:
            if img.mode == "I;16":
                return np.asarray(img, dtype=np.float64) / 65535.0
            if img.mode != "L":
                img = img.convert("L")
            return np.asarray(img, dtype=np.float64) / 255.0
    vol = read_volume(path)
    if vol.depth != 1:
        logger.warning("flow input %s has %d slices, using slice 0", path, vol.depth)
    return vol.data[0]


def cmd_upscale(args, config: dict) -> int:
    started = time.perf_counter()
    volume = read_volume(args.input)
    threads = _threads(args, config)
    if args.method == "flow":
        result = upscale_volume(volume, args.factor, _synthesis_config(args, config), threads=threads)
    else:
        kind = "cubic-convolution" if args.method == "bicubic" else "linear"
        result = interp_z(volume, args.factor, KernelSpec(kind=kind))
    write_volume(result, args.output)
    elapsed = time.perf_counter() - started
    print(f"{volume.depth} -> {result.depth} slices ({args.method}, factor {args.factor}) in {elapsed:.1f}s: {args.output}")
    return 0


def cmd_eval(args, config: dict) -> int:
    volume = read_volume(args.input)
    methods = args.methods if args.methods is not None else list(_resolve(None, config, ("eval", "methods"), ["flow", "bicubic", "average"]))
    report = run_skip_eval(
        volume,
        args.factor,
        methods,
        synthesis_config=_synthesis_config(args, config),
        threads=_threads(args, config),
        dataset=Path(args.input).name,
    )
    print(render_table(report), end="")
    if args.report is not None:
        emit_report(report, path=args.report, format=args.format)
        print(f"report written: {args.report}")
    return 0


def cmd_prep(args, config: dict) -> int:
    volume = read_volume(args.input)
    blocks = crop_subvolumes(volume, args.sub_shape, args.max_count)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = []
    for i, block in enumerate(blocks):
        name = f"{i:03d}.tif"
        write_volume(block, out_dir / name)
        if args.triplets:
            triplets = generate_triplets(block)
            manifest.append({"file": name, "triplets": [list(t.z_indices) for t in triplets]})
    if args.triplets:
        (out_dir / "triplets.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"{len(blocks)} sub-volume(s) of shape {tuple(args.sub_shape)} written to {out_dir}")
    return 0


def cmd_flow(args, config: dict) -> int:
    image_a = _read_slice_image(args.a)
    image_b = _read_slice_image(args.b)
    field = estimate_flow(image_a, image_b, _flow_config(args, config))
    write_flo(field, args.out)
    if args.viz is not None:
        save_flow_image(field, args.viz)
    print(f"flow {field.shape[1]}x{field.shape[0]} written: {args.out} (mean |F| = {float(np.mean(field.magnitude())):.3f} px)")
    return 0


def cmd_synth(args, config: dict) -> int:
    depth, height, width = args.size
    if args.kind == "sphere":
        radius = args.radius if args.radius is not None else min(height, width) / 4.0
        center = None
        if args.center is not None:
            parts = args.center.split(",")
            if len(parts) != 3:
                raise ValueError(f"--center expects z,y,x, got {args.center!r}")
            center = tuple(float(p) for p in parts)
        volume = sphere_volume(depth, height, width, radius, center)
    elif args.kind == "disk-translate":
        radius = args.radius if args.radius is not None else min(height, width) / 6.0
        start = args.start if args.start is not None else ((width - 1) / 2.0 - args.shift[0] / 2.0, (height - 1) / 2.0 - args.shift[1] / 2.0)
        volume = translating_disk_volume(depth, height, width, radius, start, args.shift)
    else:
        volume = ramp_volume(depth, height, width, axis=args.axis)
    if args.bit_depth != 8:
        volume = Volume(data=volume.data, voxel_size=volume.voxel_size, source_bit_depth=args.bit_depth)
    write_volume(volume, args.out)
    print(f"{args.kind} volume {depth}x{height}x{width} written: {args.out}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zup",
        description="Optical-flow guided z-upsampling for anisotropic image stacks.",
    )
    parser.add_argument("--version", action="version", version=f"zup {__version__}")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug (stderr)")
    common.add_argument("--config", help="TOML or JSON config file; explicit flags win over it")

    sub = parser.add_subparsers(dest="command", required=True)

    p_up = sub.add_parser("upscale", parents=[common], help="raise the z-resolution of a stack")
    p_up.add_argument("--input", required=True, help="input volume (TIFF stack or raw+sidecar)")
    p_up.add_argument("--factor", required=True, type=_factor_arg, help="2, 4 or 8")
    p_up.add_argument("--output", required=True, help="output volume path")
    p_up.add_argument("--method", choices=UPSCALE_METHODS, default="flow")
    p_up.add_argument("--alpha", type=float, help="flow regularization weight")
    p_up.add_argument("--levels", type=int, help="pyramid level cap")
    p_up.add_argument("--threads", type=_threads_arg, help="worker threads (default: ZUP_THREADS or CPU count)")
    p_up.set_defaults(func=cmd_upscale)

    p_ev = sub.add_parser("eval", parents=[common], help="skip-slice evaluation against ground truth")
    p_ev.add_argument("--input", required=True, help="isotropic ground-truth volume")
    p_ev.add_argument("--factor", required=True, type=_factor_arg, help="2, 4 or 8")
    p_ev.add_argument("--methods", type=_methods_arg, help=f"comma-separated subset of {','.join(EVAL_METHODS)}")
    p_ev.add_argument("--report", help="write the report here")
    p_ev.add_argument("--format", choices=("json", "csv", "table"), default="json")
    p_ev.add_argument("--alpha", type=float, help="flow regularization weight")
    p_ev.add_argument("--levels", type=int, help="pyramid level cap")
    p_ev.add_argument("--threads", type=_threads_arg)
    p_ev.set_defaults(func=cmd_eval)

    p_pr = sub.add_parser("prep", parents=[common], help="cut a stack into uniform blocks")
    p_pr.add_argument("--input", required=True)
    p_pr.add_argument("--sub-shape", required=True, type=_shape_arg, metavar="ZxHxW")
    p_pr.add_argument("--max-count", type=int, help="stop after this many blocks")
    p_pr.add_argument("--out-dir", required=True)
    p_pr.add_argument("--triplets", action="store_true", help="also write a slice-triplet index manifest")
    p_pr.set_defaults(func=cmd_prep)

    p_fl = sub.add_parser("flow", parents=[common], help="estimate flow between two images")
    p_fl.add_argument("--a", required=True, help="reference image (PNG/JPEG/TIFF/raw)")
    p_fl.add_argument("--b", required=True, help="target image")
    p_fl.add_argument("--out", required=True, help="output .flo path")
    p_fl.add_argument("--viz", help="also render the flow as PNG")
    p_fl.add_argument("--alpha", type=float)
    p_fl.add_argument("--levels", type=int)
    p_fl.set_defaults(func=cmd_flow)

    p_sy = sub.add_parser("synth", parents=[common], help="generate an analytic test volume")
    p_sy.add_argument("--kind", required=True, choices=("sphere", "disk-translate", "ramp"))
    p_sy.add_argument("--size", required=True, type=_shape_arg, metavar="ZxHxW")
    p_sy.add_argument("--out", required=True)
    p_sy.add_argument("--radius", type=float, help="sphere/disk radius (defaults scale with the volume)")
    p_sy.add_argument("--center", help="sphere center as z,y,x")
    p_sy.add_argument("--start", type=_pair_arg, help="disk start center as x,y")
    p_sy.add_argument("--shift", type=_pair_arg, default=(8.0, 0.0), help="disk displacement as dx,dy")
    p_sy.add_argument("--axis", choices=("z", "y", "x"), default="z", help="ramp direction")
    p_sy.add_argument("--bit-depth", type=int, choices=(8, 16), default=8)
    p_sy.set_defaults(func=cmd_synth)

    return parser


def _setup_logging(verbosity: int) -> None:
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s", force=True)


def main(argv=None) -> int:
    """Parse arguments and run a subcommand; returns the exit code."""
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _setup_logging(args.verbose)
    try:
        config = _load_config(args.config)
        return args.func(args, config)
    except (ValueError, OSError, VolumeFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()

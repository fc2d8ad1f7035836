"""Command-line interface.

Subcommands:

    extract    pull the foreground object out of a captured splat scene
    fuse       place labeled tool clouds into a background scene
    render     render one view of a cloud (color, label, or tool mask)
    generate   run a dataset job from a config file
    eval       compare two directories of rendered images

Every command exits 0 on success and 2 on a reported error.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import __version__
from .editing import assign_label, extract_foreground, fuse, robust_centroid, ExtractionParams
from .errors import SplatError
from .gaussians import Camera, RigidTransform
from .imgio import write_color_png, write_gray_png, write_label_png
from .metrics import evaluate_directories
from .pipeline import generate, parse_config
from .ply_io import (
    label_sidecar_path,
    load_labels,
    load_ply,
    save_labels,
    save_ply,
)
from .rasterizer import render
from .trajectory import CameraIntrinsics


def _parse_floats_arg(text: str, n: int, what: str) -> np.ndarray:
    fields = text.replace(",", " ").split()
    if len(fields) != n:
        raise SplatError(f"{what}: expected {n} numbers, got {len(fields)}")
    try:
        return np.array([float(f) for f in fields])
    except ValueError as exc:
        raise SplatError(f"{what}: {exc}") from None


def _cmd_extract(args: argparse.Namespace) -> int:
    cloud = load_ply(args.input)
    params = ExtractionParams(
        center_mode=args.center_mode,
        radius_percentile=args.radius_percentile,
        knn_k=args.knn_k,
        knn_distance_factor=args.knn_distance_factor,
    )
    kept, dropped = extract_foreground(cloud, params)
    labeled, _ = assign_label(kept, args.label)
    save_ply(labeled, args.output)
    save_labels(labeled.labels, label_sidecar_path(args.output))
    print(f"kept {len(kept)} of {len(cloud)} gaussians ({len(dropped)} discarded)")
    print(f"wrote {args.output} and {label_sidecar_path(args.output)}")
    return 0


def _cmd_fuse(args: argparse.Namespace) -> int:
    background = load_ply(args.background)
    poses: dict[int, RigidTransform] = {}
    for text in args.pose or []:
        tool_part, _, pose_part = text.partition(":")
        tool_id = int(tool_part)
        values = _parse_floats_arg(pose_part, 7, f"--pose {tool_id}")
        poses[tool_id] = RigidTransform(rotation=values[:4], translation=values[4:])

    tools = []
    for text in args.tool:
        tool_part, _, path = text.partition(":")
        tool_id = int(tool_part)
        if tool_id < 1:
            raise SplatError(f"tool id {tool_id} must be >= 1")
        cloud = load_ply(path)
        sidecar = label_sidecar_path(path)
        if sidecar.exists():
            cloud = cloud.with_labels(load_labels(sidecar, expected_count=len(cloud)))
        else:
            cloud = cloud.with_labels(tool_id)
        pose = poses.pop(tool_id, RigidTransform())
        if args.pivot == "centroid":
            pose = RigidTransform(
                rotation=pose.rotation,
                translation=pose.translation,
                pivot=robust_centroid(cloud),
            )
        tools.append((cloud, pose))
    if poses:
        raise SplatError(f"--pose given for tool {sorted(poses)[0]} but no matching --tool")

    scene = fuse(background, tools, sh_mode=args.sh_rotation)
    save_ply(scene.cloud, args.output)
    save_labels(scene.cloud.labels, label_sidecar_path(args.output))
    print(f"fused {len(background)} background + {len(tools)} tool(s) "
          f"-> {len(scene.cloud)} gaussians")
    print(f"wrote {args.output} and {label_sidecar_path(args.output)}")
    return 0


def _cmd_render(args: argparse.Namespace) -> int:
    cloud = load_ply(args.scene)
    sidecar = label_sidecar_path(args.scene)
    if args.scene_labels:
        cloud = cloud.with_labels(load_labels(args.scene_labels, expected_count=len(cloud)))
    elif sidecar.exists():
        cloud = cloud.with_labels(load_labels(sidecar, expected_count=len(cloud)))

    intr = _parse_floats_arg(args.intrinsics, 6, "--intrinsics")
    if args.camera:
        values = _parse_floats_arg(args.camera, 7, "--camera")
        camera = Camera.from_quaternion(
            intr[0], intr[1], intr[2], intr[3], int(intr[4]), int(intr[5]),
            values[:4], values[4:],
        )
    elif args.look_at:
        values = _parse_floats_arg(args.look_at, 6, "--look-at")
        camera = Camera.look_at(
            position=values[:3], target=values[3:],
            fx=intr[0], fy=intr[1], cx=intr[2], cy=intr[3],
            width=int(intr[4]), height=int(intr[5]),
        )
    else:
        raise SplatError("one of --camera or --look-at is required")

    background = _parse_floats_arg(args.background, 3, "--background")
    out = render(cloud, camera, mode=args.mode, background=background, tool_id=args.tool_id)
    write_color_png(out.color, args.output)
    written = [str(args.output)]
    if args.alpha_output:
        write_gray_png(out.alpha, args.alpha_output)
        written.append(str(args.alpha_output))
    if args.label_output:
        if out.label is None:
            raise SplatError("--label-output needs --mode label")
        write_label_png(out.label, args.label_output)
        written.append(str(args.label_output))
    print("wrote " + ", ".join(written))
    return 0


def _cmd_generate(args: argparse.Namespace) -> int:
    config = parse_config(args.config)
    config.output_dir = args.output
    if args.seed is not None:
        config.seed = args.seed
    manifest = generate(
        config,
        resume=args.resume,
        keep_going=args.keep_going,
        progress=print if not args.quiet else None,
    )
    print(
        f"{manifest['frames_rendered']} rendered, {manifest['frames_skipped']} skipped, "
        f"{manifest['frames_failed']} failed; manifest at {args.output}/manifest.json"
    )
    return 0 if manifest["frames_failed"] == 0 else 2


def _cmd_eval(args: argparse.Namespace) -> int:
    report = evaluate_directories(args.test, args.reference, overlay_dir=args.overlay_dir)
    print(report.format_table())
    if args.report:
        with open(args.report, "w", encoding="ascii") as fh:
            fh.write(report.format_table() + "\n")
        print(f"wrote {args.report}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splatforge",
        description="Compose splat models and render annotated image datasets.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="separate the foreground object of a capture")
    p.add_argument("--input", required=True, help="captured scene PLY")
    p.add_argument("--output", required=True, help="foreground PLY to write")
    p.add_argument("--label", type=int, default=1, help="tool id stamped on the output")
    p.add_argument("--center-mode", choices=("median", "mean"), default="median")
    p.add_argument("--radius-percentile", type=float, default=95.0)
    p.add_argument("--knn-k", type=int, default=8)
    p.add_argument("--knn-distance-factor", type=float, default=4.0)
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("fuse", help="place tool clouds into a background scene")
    p.add_argument("--background", required=True, help="background scene PLY")
    p.add_argument("--tool", action="append", required=True, metavar="ID:PATH",
                   help="tool cloud to place; repeatable")
    p.add_argument("--pose", action="append", metavar="ID:qw,qx,qy,qz,tx,ty,tz",
                   help="pose for a tool id; default identity")
    p.add_argument("--pivot", choices=("centroid", "origin"), default="centroid",
                   help="rotation pivot for tool poses")
    p.add_argument("--sh-rotation", choices=("exact", "dc_only"), default="exact")
    p.add_argument("--output", required=True, help="fused PLY to write")
    p.set_defaults(func=_cmd_fuse)

    p = sub.add_parser("render", help="render one view of a cloud")
    p.add_argument("--scene", required=True, help="PLY to render")
    p.add_argument("--scene-labels", help="label sidecar (default: <scene>.labels.txt if present)")
    p.add_argument("--intrinsics", required=True, metavar="fx,fy,cx,cy,W,H")
    p.add_argument("--camera", metavar="qw,qx,qy,qz,tx,ty,tz",
                   help="world-to-camera quaternion and translation")
    p.add_argument("--look-at", metavar="px,py,pz,tx,ty,tz",
                   help="camera position and target")
    p.add_argument("--mode", choices=("color", "label", "tool_mask"), default="color")
    p.add_argument("--tool-id", type=int, help="tool id for tool_mask mode")
    p.add_argument("--background", default="0,0,0", metavar="r,g,b")
    p.add_argument("--output", required=True, help="PNG to write")
    p.add_argument("--alpha-output", help="also write the coverage map here")
    p.add_argument("--label-output", help="also write the 16-bit label image here")
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("generate", help="run a dataset job from a config file")
    p.add_argument("config", help="job config file")
    p.add_argument("--output", required=True, help="dataset output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--resume", action="store_true", help="skip frames whose outputs exist")
    p.add_argument("--keep-going", action="store_true",
                   help="record frame failures and continue")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("eval", help="PSNR/SSIM between two image directories")
    p.add_argument("--test", required=True, help="directory of rendered images")
    p.add_argument("--reference", required=True, help="directory of reference images")
    p.add_argument("--report", help="also write the table to this file")
    p.add_argument("--overlay-dir", help="write per-pair difference overlays here")
    p.set_defaults(func=_cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SplatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

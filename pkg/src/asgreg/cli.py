"""Command-line entry point: register, evaluate, render-asg, make-scene.

Exit codes: 0 success, 2 registration rejected by the verifier, 1 error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .asg import asg_closed_form
from .evaluation import DEFAULT_BUCKETS, evaluate, make_test_cases, results_csv, summarize
from .pipeline import RegistrationConfig, RegistrationError, register
from .raster import render
from .scenes import SCENES, make_synthetic_scene
from .types import DepthMap

EXIT_OK, EXIT_ERROR, EXIT_REJECTED = 0, 1, 2

logger = logging.getLogger("asgreg")


def _load_image(path: str) -> np.ndarray:
    if path.lower().endswith(".pgm"):
        return io.read_pgm(path).astype(float)
    return io.read_raster(path)


def _camera(path: str, need: str):
    pose, K = io.read_camera(path)
    value = pose if need == "pose" else K
    if value is None:
        raise io.FormatError(f"{path}: no {need} fields found")
    return value


def cmd_register(args) -> int:
    mesh = io.read_mesh(args.mesh)
    image = _load_image(args.image)
    depth = None
    if args.depth:
        d = io.read_raster(args.depth)
        depth = DepthMap(d)
    K = _camera(args.intrinsics, "intrinsics")
    initial = _camera(args.initial_pose, "pose")
    cfg = io.read_config(args.config) if args.config else RegistrationConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    report = register(mesh, image, depth, K, initial, cfg)
    text = io.format_report(report)
    if args.out_report:
        Path(args.out_report).write_text(text)
    else:
        sys.stdout.write(text)
    if args.out_overlay and report.camera is not None:
        io.write_pgm(args.out_overlay, io.edge_overlay(image, mesh, *report.camera))
    return EXIT_OK if report.success else EXIT_REJECTED


def cmd_evaluate(args) -> int:
    scene = make_synthetic_scene(args.scene, args.seed)
    buckets = tuple(float(b) for b in args.buckets.split(",")) if args.buckets else DEFAULT_BUCKETS
    cases = make_test_cases(scene, buckets, args.trials, args.seed)
    cfg = io.read_config(args.config) if args.config else RegistrationConfig()
    if args.intrinsics_mode:
        cfg = dataclasses.replace(cfg, intrinsics_mode=args.intrinsics_mode)
    results = evaluate(scene, cases, cfg, args.mode)
    if args.out_csv:
        Path(args.out_csv).write_text(results_csv(results))
    print("target,cases,successes,mean_initial,mean,std,min,max")
    for s in summarize(results):
        print(f"{s.target:g},{s.cases},{s.successes},{s.mean_initial:.2f},"
              f"{s.mean:.2f},{s.std:.2f},{s.min:.2f},{s.max:.2f}")
    return EXIT_OK


def cmd_render_asg(args) -> int:
    mesh = io.read_mesh(args.mesh)
    pose = _camera(args.pose, "pose")
    K = _camera(args.intrinsics, "intrinsics")
    g = asg_closed_form(render(mesh, K, pose).normal_map)
    if args.out.lower().endswith(".pgm"):
        io.write_pgm(args.out, io.to_byte_image(g.magnitude, g.valid))
    else:
        io.write_raster(args.out, g.magnitude, g.valid)
    return EXIT_OK


def cmd_make_scene(args) -> int:
    scene = make_synthetic_scene(args.name, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_ply(out / "mesh.ply", scene.mesh)
    for i, (pose, q) in enumerate(zip(scene.cameras, scene.queries)):
        io.write_camera(out / f"view{i:02d}_camera.txt", pose, scene.intrinsics)
        io.write_pgm(out / f"view{i:02d}_image.pgm", q.image)
        io.write_raster(out / f"view{i:02d}_depth.txt", q.depth.depth, q.depth.valid)
    print(f"wrote {len(scene.cameras)} views of {args.name!r} to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="asgreg", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("register", help="register a photograph against a mesh")
    r.add_argument("--mesh", required=True)
    r.add_argument("--image", required=True, help="PGM or text raster")
    r.add_argument("--depth", help="text raster of query depth; omit for intensity gradients")
    r.add_argument("--intrinsics", required=True)
    r.add_argument("--initial-pose", required=True)
    r.add_argument("--config")
    r.add_argument("--out-report")
    r.add_argument("--out-overlay", help="PGM with the projected mesh edges")
    r.add_argument("--seed", type=int)
    r.set_defaults(func=cmd_register)

    e = sub.add_parser("evaluate", help="run the synthetic harness")
    e.add_argument("--scene", default="house", choices=SCENES)
    e.add_argument("--buckets", help="comma-separated initial errors in pixels")
    e.add_argument("--trials", type=int, default=20)
    e.add_argument("--mode", default="asg", choices=("asg", "icp"))
    e.add_argument("--intrinsics-mode", choices=("known", "estimate"))
    e.add_argument("--config")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out-csv")
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("render-asg", help="render the ASG image of a mesh")
    a.add_argument("--mesh", required=True)
    a.add_argument("--pose", required=True)
    a.add_argument("--intrinsics", required=True)
    a.add_argument("--out", required=True, help=".pgm for a picture, otherwise a text raster")
    a.set_defaults(func=cmd_render_asg)

    m = sub.add_parser("make-scene", help="write a synthetic scene to disk")
    m.add_argument("--name", default="house", choices=SCENES)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out-dir", required=True)
    m.set_defaults(func=cmd_make_scene)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, RegistrationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``sqgrasp <subcommand> ...``.

Subcommands read and write ASCII PCD and UTF-8 JSON so that running
``segment``, ``mirror``, ``fit`` and ``grasp`` in turn reproduces ``pipeline``.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .cloud import load_pcd, save_pcd
from .errors import SqGraspError
from .evaluate import Suite, eval_fitting, format_table
from .fit import FitOptions
from .grasp import ROTATION_STEP, GripperSpec, grasps_to_json
from .mirror import ANGLE_STEP, CENTER_METHODS, ObjectPoseEstimate
from .pipeline import (
    DEFAULT_GRIPPER,
    MirrorParams,
    PipelineConfig,
    SegmentParams,
    run_pipeline,
    stage_fit,
    stage_grasp,
    stage_mirror,
    stage_segment,
    table_frame,
)
from .scene import CLUSTER_DIST, DIST_THRESH, MAX_ITERS, MIN_SIZE, PlaneModel
from .sq_core import RigidPose, Superquadric
from .synth import SIGMA, SceneSpec, synth_scene

log = logging.getLogger("sqgrasp")


def _read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _write_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _emit(obj, out):
    if out is None:
        json.dump(obj, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    else:
        _write_json(obj, out)


def _plane_or_default(path) -> PlaneModel:
    if path is None:
        log.info("no --plane given; assuming the table is z = 0 with +z up")
        return PlaneModel(np.array([0.0, 0.0, 1.0]), 0.0)
    return PlaneModel.from_dict(_read_json(path))


def _load_pose(path):
    d = _read_json(path)
    if "center" in d:
        return ObjectPoseEstimate.from_dict(d)
    if "pose" in d and isinstance(d["pose"], dict):
        return RigidPose.from_dict(d["pose"])
    return RigidPose.from_dict(d)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_segment(args) -> int:
    cloud = load_pcd(args.input)
    params = SegmentParams(args.dist_thresh, args.max_iters, args.cluster_dist, args.min_size)
    plane, clusters = stage_segment(cloud, params, args.seed, args.viewpoint)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(plane.to_dict(), out / "plane.json")
    files = []
    for c in clusters:
        p = out / f"cluster_{c.label:02d}.pcd"
        save_pcd(c.cloud, p)
        files.append({"file": p.name, "points": len(c.cloud)})
    _write_json({"plane": plane.to_dict(), "clusters": files}, out / "segment.json")
    if not clusters:
        log.warning("no objects found above the table plane")
    print(f"plane n={np.round(plane.normal, 4).tolist()} d={plane.offset:.4f}; {len(clusters)} cluster(s) -> {out}")
    return 0


def cmd_mirror(args) -> int:
    cloud = load_pcd(args.input)
    plane = _plane_or_default(args.plane)
    params = MirrorParams(math.radians(args.angle_step), args.center, args.outlier_k, args.outlier_m)
    pose, completed = stage_mirror(cloud, plane, params, args.viewpoint)
    out_pcd = Path(args.out) if args.out else Path(args.input).with_name(Path(args.input).stem + "_mirrored.pcd")
    out_pose = Path(args.pose_out) if args.pose_out else out_pcd.with_name(out_pcd.stem + "_pose.json")
    save_pcd(completed, out_pcd)
    _write_json(pose.to_dict(), out_pose)
    print(f"{len(completed)} points -> {out_pcd}; pose -> {out_pose}")
    return 0


def cmd_fit(args) -> int:
    cloud = load_pcd(args.input)
    pose = _load_pose(args.pose)
    result = stage_fit(cloud, pose, FitOptions(max_iter=args.max_iter, op_weight=args.op_weight))
    d = result.to_dict()
    if args.no_timings:
        d["time_s"] = 0.0
    _emit(d, args.out)
    return 0 if result.converged else 3


def cmd_grasp(args) -> int:
    sq = Superquadric.from_dict(_read_json(args.sq))
    gripper = GripperSpec.from_dict(_read_json(args.gripper)) if args.gripper else DEFAULT_GRIPPER
    T_WK = None
    if args.plane:
        T_WK = table_frame(PlaneModel.from_dict(_read_json(args.plane)))
    cands = stage_grasp(sq, gripper, T_WK, math.radians(args.rotation_step))
    _emit(grasps_to_json(cands), args.out)
    accepted = sum(1 for c in cands if c.status == "accepted")
    if accepted == 0:
        log.warning("no feasible grasp")
    return 0


def cmd_pipeline(args) -> int:
    config = PipelineConfig.load(args.config)
    if args.out_dir:
        config = replace(config, output_dir=Path(args.out_dir))
    if args.no_timings:
        config = replace(config, timings=False)
    result = run_pipeline(config)
    s = result.summary()
    print(f"{s['n_objects']} object(s), {s['n_fitted']} fitted -> {config.output_dir}")
    for o in s["objects"]:
        status = "ok" if o["fitted"] else f"failed ({o['error']})"
        print(f"  object {o['index']:02d}: {status}, {o['accepted_grasps']} accepted grasp(s)")
    return result.exit_code


def cmd_synth(args) -> int:
    spec = SceneSpec.load(args.spec)
    if args.frame:
        spec = replace(spec, frame=args.frame)
    if args.no_cull:
        spec = replace(spec, cull=False)
    scene = synth_scene(spec, args.sigma, args.seed)
    out = Path(args.out)
    save_pcd(scene.cloud, out)
    gt = out.with_name(out.stem + "_truth.json") if args.truth is None else Path(args.truth)
    truth = scene.ground_truth()
    truth.update({"sigma": args.sigma, "seed": args.seed})
    _write_json(truth, gt)
    print(f"{len(scene.cloud)} points -> {out}; ground truth -> {gt}")
    return 0


def cmd_eval(args) -> int:
    suite = Suite.load(args.suite)
    records, rows = eval_fitting(suite)
    print(format_table(rows))
    if args.out:
        _write_json(
            {"records": [r.to_dict(not args.no_timings) for r in records], "summary": rows}, args.out
        )
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sqgrasp", description="Superquadric shape recovery and grasp synthesis for tabletop point clouds.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-v info, -vv debug)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("segment", help="remove the table plane and cluster the objects")
    s.add_argument("--in", dest="input", required=True, help="scene PCD")
    s.add_argument("--dist-thresh", type=float, default=DIST_THRESH, help="plane inlier distance (m)")
    s.add_argument("--max-iters", type=int, default=MAX_ITERS, help="RANSAC iterations")
    s.add_argument("--cluster-dist", type=float, default=CLUSTER_DIST, help="linking distance (m)")
    s.add_argument("--min-size", type=int, default=MIN_SIZE, help="smallest cluster kept")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--viewpoint", type=float, nargs=3, metavar=("X", "Y", "Z"), help="sensor position (default: origin)")
    s.add_argument("--out-dir", default=".", help="writes plane.json, segment.json and cluster_NN.pcd")
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("mirror", help="estimate pose and complete one cluster by point reflection")
    s.add_argument("--in", dest="input", required=True, help="cluster PCD")
    s.add_argument("--plane", help="plane.json from segment (default: z = 0)")
    s.add_argument("--angle-step", type=float, default=math.degrees(ANGLE_STEP), help="yaw sweep step (deg)")
    s.add_argument("--center", choices=CENTER_METHODS, default="refined", help="reflection centre estimate")
    s.add_argument("--outlier-k", type=int, default=30, help="neighbours for outlier removal (0 disables)")
    s.add_argument("--outlier-m", type=float, default=1.0, help="std multiplier for outlier removal")
    s.add_argument("--viewpoint", type=float, nargs=3, metavar=("X", "Y", "Z"), help="sensor position (default: origin)")
    s.add_argument("--out", help="completed PCD (default: <in>_mirrored.pcd)")
    s.add_argument("--pose-out", help="pose JSON (default: <out>_pose.json)")
    s.set_defaults(func=cmd_mirror)

    s = sub.add_parser("fit", help="fit the superquadric shape with the pose held fixed")
    s.add_argument("--in", dest="input", required=True, help="completed PCD")
    s.add_argument("--pose", required=True, help="pose JSON from mirror, or {x,y,z,roll,pitch,yaw}")
    s.add_argument("--op-weight", action="store_true", help="weight residuals by distance from the centre")
    s.add_argument("--max-iter", type=int, default=100)
    s.add_argument("--no-timings", action="store_true", help="write time_s = 0 for reproducible output")
    s.add_argument("--out", help="result JSON (default: stdout)")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("grasp", help="rank antipodal grasps on a fitted superquadric")
    s.add_argument("--sq", required=True, help="superquadric JSON (fit output)")
    s.add_argument("--gripper", help="gripper JSON {width_m, depth_m, alpha_deg} (default 0.08/0.07/45)")
    s.add_argument("--plane", help="plane.json: express grasps in the table frame (sensor-frame inputs)")
    s.add_argument("--rotation-step", type=float, default=math.degrees(ROTATION_STEP), help="variant step (deg)")
    s.add_argument("--out", help="grasp list JSON (default: stdout)")
    s.set_defaults(func=cmd_grasp)

    s = sub.add_parser("pipeline", help="run every stage from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir", help="override output_dir")
    s.add_argument("--no-timings", action="store_true", help="omit timings for byte-identical output")
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("synth", help="render a synthetic single-view scene")
    s.add_argument("--spec", required=True, help="scene spec JSON")
    s.add_argument("--sigma", type=float, default=SIGMA, help="Gaussian noise std (m)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--frame", choices=("camera", "world"), help="override the output frame")
    s.add_argument("--no-cull", action="store_true", help="keep back-facing samples (full view)")
    s.add_argument("--out", default="scene.pcd")
    s.add_argument("--truth", help="ground-truth JSON (default: <out>_truth.json)")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("eval", help="shape-recovery evaluation over a suite")
    s.add_argument("--suite", required=True)
    s.add_argument("--out", help="records and summary JSON")
    s.add_argument("--no-timings", action="store_true")
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SqGraspError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())

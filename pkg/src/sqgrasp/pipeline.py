"""End-to-end orchestration: load, segment, complete, fit, grasp and export.

Each stage function here is also what the matching CLI subcommand runs, so
the pipeline equals the composition of the subcommands.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cloud import PointCloud, check_rigid, invert_rigid, load_pcd, save_pcd, transform
from .errors import ParameterError, SqGraspError
from .fit import FitOptions, FitResult, fit_lm
from .grasp import ROTATION_STEP, GripperSpec, synthesize
from .mirror import ANGLE_STEP, ObjectPoseEstimate, complete_one
from .scene import CLUSTER_DIST, DIST_THRESH, MAX_ITERS, MIN_SIZE, PlaneModel, cluster_objects, fit_table_plane, split_by_plane
from .sq_core import RigidPose, Superquadric, sample_points

log = logging.getLogger(__name__)

DEFAULT_GRIPPER = GripperSpec(0.08, 0.07, math.radians(45.0))
SAMPLE_SPACING = 0.005


@dataclass(frozen=True)
class SegmentParams:
    dist_thresh: float = DIST_THRESH
    max_iters: int = MAX_ITERS
    cluster_dist: float = CLUSTER_DIST
    min_size: int = MIN_SIZE


@dataclass(frozen=True)
class MirrorParams:
    angle_step: float = ANGLE_STEP
    center: str = "refined"
    outlier_k: int = 30
    outlier_m: float = 1.0


@dataclass(frozen=True, eq=False)
class PipelineConfig:
    input: Path
    output_dir: Path | None
    seed: int
    gripper: GripperSpec = DEFAULT_GRIPPER
    segment: SegmentParams = field(default_factory=SegmentParams)
    mirror: MirrorParams = field(default_factory=MirrorParams)
    fit: FitOptions = field(default_factory=FitOptions)
    camera_pose: np.ndarray | None = None  # camera-to-world; None keeps the sensor frame
    rotation_step: float = ROTATION_STEP
    sample_spacing: float = SAMPLE_SPACING
    timings: bool = True

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "PipelineConfig":
        """Build from the JSON config; relative paths resolve against ``base_dir``."""
        base = Path(base_dir) if base_dir is not None else Path.cwd()

        def _path(p):
            p = Path(p)
            return p if p.is_absolute() else base / p

        if "seed" not in d:
            raise ParameterError("config needs an explicit 'seed' (plane fitting is randomised)")
        if "input" not in d:
            raise ParameterError("config needs an 'input' point cloud path")
        inp = _path(d["input"])
        if not inp.exists():
            raise ParameterError(f"input {inp} does not exist")
        grip = d.get("gripper")
        if isinstance(grip, str):
            grip = json.loads(_path(grip).read_text(encoding="utf-8"))
        seg = d.get("segmentation", {})
        mir = d.get("mirror", {})
        fit = d.get("fit", {})
        cam = d.get("camera_pose")
        return cls(
            input=inp,
            output_dir=_path(d.get("output_dir", "out")),
            seed=int(d["seed"]),
            gripper=DEFAULT_GRIPPER if grip is None else GripperSpec.from_dict(grip),
            segment=SegmentParams(
                float(seg.get("dist_thresh", DIST_THRESH)),
                int(seg.get("max_iters", MAX_ITERS)),
                float(seg.get("cluster_dist", CLUSTER_DIST)),
                int(seg.get("min_size", MIN_SIZE)),
            ),
            mirror=MirrorParams(
                math.radians(float(mir.get("angle_step_deg", math.degrees(ANGLE_STEP)))),
                str(mir.get("center", "refined")),
                int(mir.get("outlier_k", 30)),
                float(mir.get("outlier_m", 1.0)),
            ),
            fit=FitOptions(
                max_iter=int(fit.get("max_iter", 100)),
                op_weight=bool(fit.get("op_weight", False)),
            ),
            camera_pose=None if cam is None else RigidPose.from_dict(cam).matrix,
            rotation_step=math.radians(float(d.get("rotation_step_deg", math.degrees(ROTATION_STEP)))),
            sample_spacing=float(d.get("sample_spacing", SAMPLE_SPACING)),
            timings=bool(d.get("timings", True)),
        )

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")), path.parent)


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def default_viewpoint(cloud: PointCloud, viewpoint=None):
    """The sensor position: given explicitly, or the origin of a sensor-frame cloud."""
    if viewpoint is not None:
        return np.asarray(viewpoint, dtype=float)
    return np.zeros(3) if cloud.frame_id == "camera" else None


def stage_segment(cloud: PointCloud, params: SegmentParams, seed: int, viewpoint=None):
    """Plane fit and clustering of the points above it; returns ``(plane, clusters)``."""
    viewpoint = default_viewpoint(cloud, viewpoint)
    plane = fit_table_plane(cloud, params.dist_thresh, params.max_iters, seed, viewpoint)
    _, above, _ = split_by_plane(cloud, plane, params.dist_thresh)
    clusters = cluster_objects(cloud.subset(above), params.cluster_dist, params.min_size)
    return plane, clusters


def stage_mirror(cloud: PointCloud, plane: PlaneModel, params: MirrorParams, viewpoint=None):
    """``(pose, completed_cloud)`` for one cluster."""
    viewpoint = default_viewpoint(cloud, viewpoint)
    pose, completed, _ = complete_one(
        cloud, plane, params.angle_step, params.outlier_k, params.outlier_m, params.center, viewpoint
    )
    return pose, completed


def stage_fit(completed: PointCloud, pose, options: FitOptions) -> FitResult:
    return fit_lm(completed, pose, options)


def table_frame(plane: PlaneModel) -> np.ndarray:
    """World-from-sensor transform of a table frame: z along the plane normal, origin below the sensor."""
    basis = plane.basis
    origin = -plane.offset * plane.normal
    T = np.eye(4)
    T[:3, :3] = basis
    T[:3, 3] = origin
    return invert_rigid(T)


def stage_grasp(sq: Superquadric, gripper: GripperSpec, T_WK=None, rotation_step: float = ROTATION_STEP):
    return synthesize(sq, gripper, T_WK, rotation_step)


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ObjectResult:
    index: int
    n_points: int
    pose: ObjectPoseEstimate | None = None
    completed: PointCloud | None = None
    fit: FitResult | None = None
    grasps: tuple = ()
    error: str | None = None
    timings: dict = field(default_factory=dict)

    def to_dict(self, with_timings: bool = True) -> dict:
        fit = None
        if self.fit is not None:
            fit = self.fit.to_dict()
            if not with_timings:
                fit["time_s"] = 0.0
        accepted = sum(1 for g in self.grasps if g.status == "accepted")
        return {
            "index": self.index,
            "n_points": self.n_points,
            "pose_estimate": None if self.pose is None else self.pose.to_dict(),
            "fit": fit,
            "grasps": [g.to_dict() for g in self.grasps],
            "grasp_counts": {"accepted": accepted, "discarded": len(self.grasps) - accepted},
            "error": self.error,
            "timings_s": dict(self.timings) if with_timings else {},
        }


@dataclass(frozen=True, eq=False)
class PipelineResult:
    plane: PlaneModel | None
    objects: tuple
    frame: str
    T_WK: np.ndarray

    @property
    def ok(self) -> bool:
        return all(o.fit is not None for o in self.objects)

    @property
    def exit_code(self) -> int:
        return 0 if self.ok else 1

    def summary(self) -> dict:
        return {
            "frame": self.frame,
            "plane": None if self.plane is None else self.plane.to_dict(),
            "grasp_world_from_cloud": [[float(v) for v in row] for row in self.T_WK],
            "n_objects": len(self.objects),
            "n_fitted": sum(1 for o in self.objects if o.fit is not None),
            "objects": [
                {
                    "index": o.index,
                    "fitted": o.fit is not None,
                    "converged": bool(o.fit.converged) if o.fit is not None else False,
                    "accepted_grasps": sum(1 for g in o.grasps if g.status == "accepted"),
                    "error": o.error,
                }
                for o in self.objects
            ],
        }


def _timed(timings, key, fn, *args):
    t0 = time.perf_counter()
    out = fn(*args)
    timings[key] = time.perf_counter() - t0
    return out


def process_object(index, cluster_cloud, plane, config: PipelineConfig, T_WK, viewpoint=None) -> ObjectResult:
    """Mirror, fit and grasp one cluster; stage failures are captured in ``error``."""
    timings: dict = {}
    n = len(cluster_cloud)
    try:
        pose, completed = _timed(timings, "mirror", stage_mirror, cluster_cloud, plane, config.mirror, viewpoint)
    except (SqGraspError, ValueError) as exc:
        log.warning("object %d: completion failed: %s", index, exc)
        return ObjectResult(index, n, error=f"mirror: {exc}", timings=timings)
    try:
        fit = _timed(timings, "fit", stage_fit, completed, pose, config.fit)
    except (SqGraspError, ValueError) as exc:
        log.warning("object %d: fit failed: %s", index, exc)
        return ObjectResult(index, n, pose, completed, error=f"fit: {exc}", timings=timings)
    grasps = _timed(timings, "grasp", stage_grasp, fit.sq, config.gripper, T_WK, config.rotation_step)
    return ObjectResult(index, n, pose, completed, fit, tuple(grasps), None, timings)


def run_on_cloud(cloud: PointCloud, config: PipelineConfig) -> PipelineResult:
    """Run every stage on an in-memory cloud without writing anything."""
    viewpoint = None
    if config.camera_pose is not None:
        T = check_rigid(config.camera_pose)
        cloud = transform(cloud, T, "world")
        viewpoint = T[:3, 3]
    plane, clusters = stage_segment(cloud, config.segment, config.seed, viewpoint)
    T_WK = np.eye(4) if cloud.frame_id == "world" else table_frame(plane)
    if not clusters:
        log.warning("no objects found above the table plane")
    objects = tuple(process_object(i, c.cloud, plane, config, T_WK, viewpoint) for i, c in enumerate(clusters))
    return PipelineResult(plane, objects, cloud.frame_id, T_WK)


def _dump(obj, path: Path):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_outputs(result: PipelineResult, out_dir: Path, spacing: float = SAMPLE_SPACING, timings: bool = True) -> list[Path]:
    """Per-object JSON, completed-cloud PCD and superquadric-surface PCD, plus ``summary.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for o in result.objects:
        stem = out_dir / f"object_{o.index:02d}"
        _dump(o.to_dict(timings), stem.with_suffix(".json"))
        written.append(stem.with_suffix(".json"))
        if o.completed is not None:
            p = out_dir / f"object_{o.index:02d}_mirrored.pcd"
            save_pcd(o.completed, p)
            written.append(p)
        if o.fit is not None:
            sq = o.fit.sq
            d = min(spacing, 0.25 * float(np.min(sq.axes)))
            p = out_dir / f"object_{o.index:02d}_sq.pcd"
            save_pcd(PointCloud(sample_points(sq, d, world=True), result.frame), p)
            written.append(p)
    _dump(result.summary(), out_dir / "summary.json")
    written.append(out_dir / "summary.json")
    return written


def run_pipeline(config: PipelineConfig) -> PipelineResult:
    """Load ``config.input``, run all stages and export into ``config.output_dir`` (if set)."""
    cloud = load_pcd(config.input)
    result = run_on_cloud(cloud, config)
    if config.output_dir is not None:
        write_outputs(result, config.output_dir, config.sample_spacing, config.timings)
    return result


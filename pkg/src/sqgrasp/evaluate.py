"""Shape-recovery evaluation over a suite of ground-truth objects and table poses.

Suite JSON::

    {
      "objects": [{"name": "dice", "a1": 0.05, "a2": 0.05, "a3": 0.05, "eps1": 0.6, "eps2": 0.6}],
      "poses": [{"x": 0.0, "y": 0.0, "yaw_deg": 0.0}],
      "camera": {"position": [0.7, 0.0, 0.6], "look_at": [0.0, 0.0, 0.0]},
      "sigma": 0.002, "seed": 0, "cull": true, "timing_repeats": 3,
      "gripper": {"width_m": 0.08, "depth_m": 0.07, "alpha_deg": 45}
    }

Each object rests upright on the table (centre at height a3) at every pose.
Grasp validity is geometric only (accepted candidates per object), not a
physical pick-up success rate.
"""

from __future__ import annotations

import json
import logging
import math
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import SqGraspError
from .fit import FitOptions, fit_lm, radial_error
from .grasp import GripperSpec
from .pipeline import DEFAULT_GRIPPER, MirrorParams, PipelineConfig, SegmentParams, run_on_cloud
from .sq_core import RigidPose, Superquadric
from .synth import SIGMA, SPACING, SceneSpec, look_at, synth_scene

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class EvalRecord:
    object_id: str
    pose_index: int
    truth: Superquadric
    recovered: Superquadric | None
    error_pct: float | None
    fit_time_s: float | None
    accepted: int = 0
    discarded: int = 0
    timings: dict = field(default_factory=dict)
    failed: str | None = None

    def to_dict(self, with_timings: bool = True) -> dict:
        return {
            "object": self.object_id,
            "pose": self.pose_index,
            "truth": self.truth.to_dict(),
            "recovered": None if self.recovered is None else self.recovered.to_dict(),
            "error_pct": self.error_pct,
            "fit_time_s": self.fit_time_s if with_timings else None,
            "grasps_accepted": self.accepted,
            "grasps_discarded": self.discarded,
            "timings_s": dict(self.timings) if with_timings else {},
            "failed": self.failed,
        }


@dataclass(frozen=True)
class Suite:
    objects: tuple
    poses: tuple
    camera: dict
    sigma: float = SIGMA
    seed: int = 0
    cull: bool = True
    spacing: float = SPACING
    timing_repeats: int = 3
    gripper: GripperSpec = DEFAULT_GRIPPER
    center: str = "refined"

    @classmethod
    def from_dict(cls, d) -> "Suite":
        return cls(
            tuple(d["objects"]),
            tuple(d.get("poses", [{"x": 0.0, "y": 0.0, "yaw_deg": 0.0}])),
            dict(d.get("camera", {"position": [0.7, 0.0, 0.6], "look_at": [0.0, 0.0, 0.0]})),
            float(d.get("sigma", SIGMA)),
            int(d.get("seed", 0)),
            bool(d.get("cull", True)),
            float(d.get("spacing", SPACING)),
            int(d.get("timing_repeats", 3)),
            GripperSpec.from_dict(d["gripper"]) if "gripper" in d else DEFAULT_GRIPPER,
            str(d.get("center", "refined")),
        )

    @classmethod
    def load(cls, path) -> "Suite":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _camera(cam: dict) -> np.ndarray:
    if "pose" in cam:
        return RigidPose.from_dict(cam["pose"]).matrix
    return look_at(cam["position"], cam.get("look_at", (0.0, 0.0, 0.0)), cam.get("up", (0.0, 0.0, 1.0)))


def place(obj: dict, pose: dict) -> Superquadric:
    """The object resting upright on the z = 0 table at ``pose``."""
    yaw = math.radians(float(pose.get("yaw_deg", 0.0)))
    a3 = float(obj["a3"])
    return Superquadric(
        obj["a1"], obj["a2"], a3, obj["eps1"], obj["eps2"], RigidPose((pose.get("x", 0.0), pose.get("y", 0.0), a3), 0.0, 0.0, yaw)
    )


def evaluate_one(truth: Superquadric, camera: np.ndarray, suite: Suite, seed: int, object_id="", pose_index=0) -> EvalRecord:
    """Synthesize a single-object scene, run the pipeline and score the largest cluster."""
    spec = SceneSpec((truth,), camera, suite.spacing, (truth.pose.position[0], truth.pose.position[1]), frame="camera", cull=suite.cull)
    try:
        scene = synth_scene(spec, suite.sigma, seed)
        cfg = PipelineConfig(
            input=Path("-"),
            output_dir=None,
            seed=seed,
            gripper=suite.gripper,
            segment=SegmentParams(),
            mirror=MirrorParams(center=suite.center),
            camera_pose=camera,
        )
        t0 = time.perf_counter()
        res = run_on_cloud(scene.cloud, cfg)
        total = time.perf_counter() - t0
        fitted = [o for o in res.objects if o.fit is not None]
        if not fitted:
            why = res.objects[0].error if res.objects else "no cluster found"
            return EvalRecord(object_id, pose_index, truth, None, None, None, failed=why)
        obj = fitted[0]
        # median of repeated fits on the same completed cloud
        times = [obj.fit.time_s]
        for _ in range(max(0, suite.timing_repeats - 1)):
            times.append(fit_lm(obj.completed, obj.pose, FitOptions()).time_s)
        err = radial_error(truth, obj.fit.sq)
        acc = sum(1 for g in obj.grasps if g.status == "accepted")
        timings = dict(obj.timings)
        timings["total"] = total
        return EvalRecord(
            object_id, pose_index, truth, obj.fit.sq, err, statistics.median(times), acc, len(obj.grasps) - acc, timings
        )
    except (SqGraspError, ValueError) as exc:
        log.warning("%s pose %d failed: %s", object_id, pose_index, exc)
        return EvalRecord(object_id, pose_index, truth, None, None, None, failed=str(exc))


def eval_fitting(suite: Suite) -> tuple[list[EvalRecord], list[dict]]:
    """Records for every object x pose and a per-object summary."""
    camera = _camera(suite.camera)
    records = []
    for oi, obj in enumerate(suite.objects):
        name = obj.get("name", f"object_{oi}")
        for pi, pose in enumerate(suite.poses):
            truth = place(obj, pose)
            records.append(evaluate_one(truth, camera, suite, suite.seed + 1000 * oi + pi, name, pi))
    return records, summarize(records)


def summarize(records) -> list[dict]:
    rows = []
    names = list(dict.fromkeys(r.object_id for r in records))
    for name in names:
        rs = [r for r in records if r.object_id == name]
        ok = [r for r in rs if r.failed is None]
        row = {"object": name, "runs": len(rs), "failed": len(rs) - len(ok)}
        if ok:
            params = np.array([r.recovered.shape for r in ok])
            for key, v in zip(("a1", "a2", "a3", "eps1", "eps2"), params.mean(axis=0)):
                row[key] = float(v)
            row["avg_time_s"] = float(np.mean([r.fit_time_s for r in ok]))
            row["avg_error_pct"] = float(np.mean([r.error_pct for r in ok]))
            row["grasp_valid_rate"] = float(np.mean([r.accepted > 0 for r in ok]))
        rows.append(row)
    return rows


def format_table(rows) -> str:
    head = f"{'object':<16}{'a1':>8}{'a2':>8}{'a3':>8}{'e1':>7}{'e2':>7}{'time s':>9}{'error %':>9}{'grasp':>7}"
    lines = [head, "-" * len(head)]
    for r in rows:
        if "a1" not in r:
            lines.append(f"{r['object']:<16}  all {r['runs']} runs failed")
            continue
        lines.append(
            f"{r['object']:<16}{r['a1']:>8.3f}{r['a2']:>8.3f}{r['a3']:>8.3f}{r['eps1']:>7.2f}{r['eps2']:>7.2f}"
            f"{r['avg_time_s']:>9.3f}{r['avg_error_pct']:>9.2f}{r['grasp_valid_rate']:>7.2f}"
        )
    return "\n".join(lines)

"""Synthetic single-view tabletop scenes built from ground-truth superquadrics.

A scene spec (JSON) looks like::

    {
      "objects": [{"a1": 0.03, "a2": 0.03, "a3": 0.05, "eps1": 1.0, "eps2": 1.0,
                   "pose": {"x": 0.0, "y": 0.0, "z": 0.05, "yaw": 0.3}}],
      "camera": {"position": [0.6, 0.0, 0.6], "look_at": [0.0, 0.0, 0.0]},
      "spacing": 0.005,
      "table": {"center": [0, 0], "half_size": 0.4, "spacing": 0.01},
      "frame": "camera"
    }

The camera may instead be given as ``{"pose": {x, y, z, roll, pitch, yaw}}``
(camera to world). Camera axes: z along the optical axis, x right, y down.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cloud import PointCloud, invert_rigid, transform
from .errors import SceneSpecError
from .sq_core import RigidPose, Superquadric, implicit_value, sample_surface_arrays, support, surface_normal

log = logging.getLogger(__name__)

SIGMA = 0.002
SPACING = 0.005
TABLE_HALF = 0.4
TABLE_SPACING = 0.01
REST_TOL = 1e-3


def look_at(position, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world transform for a camera at ``position`` looking at ``target``."""
    pos = np.asarray(position, dtype=float)
    z = np.asarray(target, dtype=float) - pos
    if np.linalg.norm(z) == 0.0:
        raise SceneSpecError("camera position equals its look-at target")
    z /= np.linalg.norm(z)
    up = np.asarray(up, dtype=float)
    down = -(up - (up @ z) * z)
    if np.linalg.norm(down) < 1e-9:
        # looking straight along the up vector: image "down" follows world -y
        alt = np.array([0.0, 1.0, 0.0])
        down = -(alt - (alt @ z) * z)
    y = down / np.linalg.norm(down)
    x = np.cross(y, z)
    T = np.eye(4)
    T[:3, :3] = np.column_stack([x, y, z])
    T[:3, 3] = pos
    return T


@dataclass(frozen=True, eq=False)
class SceneSpec:
    objects: tuple
    camera: np.ndarray  # camera-to-world 4x4
    spacing: float = SPACING
    table_center: tuple = (0.0, 0.0)
    table_half: float = TABLE_HALF
    table_spacing: float = TABLE_SPACING
    frame: str = "camera"
    cull: bool = True
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d) -> "SceneSpec":
        try:
            objects = tuple(Superquadric.from_dict(o) for o in d["objects"])
            cam = d["camera"]
            if "pose" in cam:
                camera = RigidPose.from_dict(cam["pose"]).matrix
            else:
                camera = look_at(cam["position"], cam.get("look_at", (0.0, 0.0, 0.0)), cam.get("up", (0.0, 0.0, 1.0)))
            table = d.get("table", {})
            frame = d.get("frame", "camera")
        except (KeyError, TypeError, ValueError) as exc:
            raise SceneSpecError(f"malformed scene spec: {exc}") from exc
        if frame not in ("camera", "world"):
            raise SceneSpecError(f"frame must be 'camera' or 'world', got {frame!r}")
        return cls(
            objects,
            camera,
            float(d.get("spacing", SPACING)),
            tuple(table.get("center", (0.0, 0.0))),
            float(table.get("half_size", TABLE_HALF)),
            float(table.get("spacing", TABLE_SPACING)),
            frame,
            bool(d.get("cull", True)),
        )

    @classmethod
    def load(cls, path) -> "SceneSpec":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    cloud: PointCloud
    objects: tuple
    camera: np.ndarray
    labels: np.ndarray  # object index per point, -1 for the table

    def ground_truth(self) -> dict:
        return {
            "objects": [o.to_dict() for o in self.objects],
            "camera_pose": RigidPose.from_matrix(self.camera).to_dict(),
            "frame": self.cloud.frame_id,
        }


def check_overlaps(objects, spacing=SPACING) -> None:
    """Raise :class:`SceneSpecError` if two shapes intersect or a shape sinks into the table."""
    for i, sq in enumerate(objects):
        bottom = sq.pose.position[2] - support(sq, sq.pose.rotation.T @ np.array([0.0, 0.0, -1.0]))
        if bottom < -REST_TOL:
            raise SceneSpecError(f"object {i} penetrates the table plane by {-bottom:.4f} m")
        if bottom > REST_TOL:
            log.warning("object %d floats %.4f m above the table", i, bottom)
    radii = [float(np.max(sq.axes)) * math.sqrt(3.0) for sq in objects]
    for i in range(len(objects)):
        for j in range(i + 1, len(objects)):
            a, b = objects[i], objects[j]
            if np.linalg.norm(a.pose.translation - b.pose.translation) > radii[i] + radii[j]:
                continue
            for src, dst in ((a, b), (b, a)):
                d = min(spacing, 0.25 * float(np.min(src.axes)))
                pts = src.to_world(sample_surface_arrays(src, d)[2])
                if np.any(implicit_value(dst, dst.to_local(pts)) < 1.0):
                    raise SceneSpecError(f"objects {i} and {j} overlap")


def visible_mask(sq: Superquadric, eta, omega, points_world, camera_position) -> np.ndarray:
    """True for samples whose outward normal faces the camera."""
    n_world = surface_normal(sq, eta, omega) @ sq.pose.rotation.T
    return np.einsum("ij,ij->i", n_world, points_world - camera_position) < 0.0


def synth_scene(spec: SceneSpec, sigma: float = SIGMA, seed: int = 0) -> SyntheticScene:
    """Sample, cull, add noise and append a table patch; deterministic for a given seed."""
    if sigma < 0.0:
        raise SceneSpecError("sigma must be >= 0")
    check_overlaps(spec.objects, spec.spacing)
    rng = np.random.default_rng(seed)
    cam_pos = spec.camera[:3, 3]
    chunks, labels = [], []
    for i, sq in enumerate(spec.objects):
        d = min(spec.spacing, 0.25 * float(np.min(sq.axes)))
        eta, omega, local = sample_surface_arrays(sq, d)
        pts = sq.to_world(local)
        if spec.cull:
            pts = pts[visible_mask(sq, eta, omega, pts, cam_pos)]
        chunks.append(pts)
        labels.append(np.full(len(pts), i))

    cx, cy = spec.table_center
    g = np.arange(-spec.table_half, spec.table_half + 0.5 * spec.table_spacing, spec.table_spacing)
    gx, gy = np.meshgrid(cx + g, cy + g)
    table = np.column_stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)])
    chunks.append(table)
    labels.append(np.full(len(table), -1))

    pts = np.vstack(chunks)
    if sigma > 0.0:
        pts = pts + rng.normal(0.0, sigma, size=pts.shape)
    cloud = PointCloud(pts, "world")
    if spec.frame == "camera":
        cloud = transform(cloud, invert_rigid(spec.camera), "camera")
    return SyntheticScene(cloud, spec.objects, spec.camera, np.concatenate(labels))

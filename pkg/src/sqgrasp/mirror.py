"""Partial-view completion by point reflection through the estimated object centre."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from scipy.optimize import least_squares
from scipy.spatial import cKDTree

from .cloud import PointCloud, centroid, convex_hull_2d, polygon_area, remove_statistical_outliers, rotate_2d
from .errors import DegenerateHullError, SqGraspError
from .scene import Cluster, PlaneModel
from .sq_core import RigidPose, log_implicit_value, rotation_from_rpy, rpy_from_rotation, spow

log = logging.getLogger(__name__)

ANGLE_STEP = math.radians(1.0)
CENTER_METHODS = ("centroid", "refined")
REFINE_POINTS = 400  # evenly strided subset used by the pose refinement


@dataclass(frozen=True, eq=False)
class ObjectPoseEstimate:
    """Object centre plus yaw about the table normal (roll = pitch = 0 in the table frame).

    ``table_rotation`` maps table-frame vectors (u, v, n) into the cloud frame.
    """

    center: np.ndarray
    yaw: float
    table_rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    residual: float = 0.0

    @property
    def rotation(self) -> np.ndarray:
        return self.table_rotation @ rotation_from_rpy(0.0, 0.0, self.yaw)

    def to_rigid_pose(self) -> RigidPose:
        return RigidPose(tuple(self.center), *rpy_from_rotation(self.rotation))

    def to_dict(self) -> dict:
        return {
            "center": [float(v) for v in self.center],
            "yaw": float(self.yaw),
            "table_rotation": [[float(v) for v in row] for row in self.table_rotation],
            "residual": float(self.residual) if math.isfinite(self.residual) else None,
            "pose": self.to_rigid_pose().to_dict(),
        }

    @classmethod
    def from_dict(cls, d) -> "ObjectPoseEstimate":
        res = d.get("residual")
        return cls(
            np.asarray(d["center"], dtype=float),
            float(d["yaw"]),
            np.asarray(d.get("table_rotation", np.eye(3)), dtype=float),
            math.inf if res is None else float(res),
        )


def estimate_yaw(cluster, plane: PlaneModel, angle_step: float = ANGLE_STEP) -> tuple[float, float]:
    """Yaw in [0, pi/2) minimising the gap between bounding-box and cloud volume.

    The footprint hull is rotated in ``angle_step`` increments; at each angle
    the box volume is ``l * w * h`` with ``l, w`` the extents of the rotated hull
    and ``h`` the greatest height above the plane. The cloud volume is the
    rotation-invariant hull prism ``area * h``, so the minimiser is the
    tightest box. Returns ``(yaw, volume_gap)``; a degenerate footprint gives
    ``(0.0, inf)``.
    """
    if angle_step <= 0.0:
        raise ValueError("angle_step must be > 0")
    cloud = cluster.cloud if isinstance(cluster, Cluster) else cluster
    basis = plane.basis
    pts2 = cloud.points @ basis[:, :2]
    h = float(np.max(plane.signed_distance(cloud)))
    try:
        hull = convex_hull_2d(pts2)
    except DegenerateHullError:
        return 0.0, math.inf
    v_cloud = polygon_area(hull) * h
    angles = np.arange(0.0, 0.5 * math.pi - 1e-12, angle_step)
    best_theta, best_gap = 0.0, math.inf
    for theta in angles:
        # express the hull in a frame rotated by +theta
        r = rotate_2d(hull, -theta)
        l, w = np.ptp(r, axis=0)
        gap = abs(v_cloud - l * w * h)
        if gap < best_gap - 1e-15 * max(1.0, abs(v_cloud)):
            best_theta, best_gap = float(theta), gap
    return best_theta, best_gap


def _footprint(cloud: PointCloud, plane: PlaneModel, yaw: float):
    """Centre of the yaw-aligned footprint rectangle, lifted to half the object height."""
    basis = plane.basis
    r = rotate_2d(cloud.points @ basis[:, :2], -yaw)
    mid = rotate_2d((0.5 * (r.min(axis=0) + r.max(axis=0)))[None], yaw)[0]
    h = float(np.max(plane.signed_distance(cloud)))
    return basis[:, :2] @ mid + 0.5 * h * basis[:, 2] - plane.offset * plane.normal, h


def _grid_surface(a, e1, e2, rot, center, n_eta=16, n_omega=32):
    """Points and outward normals on a fixed (eta, omega) grid, world frame."""
    eta = np.linspace(-0.5 * math.pi, 0.5 * math.pi, n_eta + 2)[1:-1]
    omega = np.linspace(-math.pi, math.pi, n_omega, endpoint=False)
    eta, omega = (g.ravel() for g in np.meshgrid(eta, omega))
    ce, se, cw, sw = np.cos(eta), np.sin(eta), np.cos(omega), np.sin(omega)
    p = np.column_stack(
        [a[0] * spow(ce, e1) * spow(cw, e2), a[1] * spow(ce, e1) * spow(sw, e2), a[2] * spow(se, e1)]
    )
    n = np.column_stack(
        [spow(ce, 2 - e1) * spow(cw, 2 - e2) / a[0], spow(ce, 2 - e1) * spow(sw, 2 - e2) / a[1], spow(se, 2 - e1) / a[2]]
    )
    n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)
    return p @ rot.T + center, n @ rot.T


def refine_pose(cloud, plane: PlaneModel, initial: ObjectPoseEstimate, viewpoint=None) -> ObjectPoseEstimate:
    """In-plane centre and yaw from a superquadric aligned to the visible points.

    The centroid of a single-view cloud lies well inside the object toward the
    sensor, so reflecting through it collapses the shape. Here the shape,
    the in-plane centre and the yaw are fitted together to the visible
    surface; the centre height stays at half the object height (the object
    rests on the plane). With a ``viewpoint`` the fit also pulls model
    surface that should face the sensor toward the observed points, which
    stops the hidden side from stretching away. Two yaw seeds 45 degrees
    apart guard against the diamond-footprint ambiguity of the box sweep.
    Only the pose is kept.
    """
    from .fit import A_MAX, A_MIN, EPS_MAX, EPS_MIN, initialize

    cloud = cloud.cloud if isinstance(cloud, Cluster) else cloud
    basis = plane.basis
    pts = cloud.points
    if len(pts) > REFINE_POINTS:
        pts = pts[np.linspace(0, len(pts) - 1, REFINE_POINTS).astype(int)]
    c0, h = _footprint(cloud, plane, initial.yaw)
    up = 0.5 * h * basis[:, 2] - plane.offset * plane.normal
    uv0 = basis[:, :2].T @ c0
    extent = float(np.max(np.ptp(pts, axis=0)))
    tree = cKDTree(pts) if viewpoint is not None else None
    vp = None if viewpoint is None else np.asarray(viewpoint, dtype=float)
    w_data = 1.0 / math.sqrt(len(pts))

    def unpack(x):
        cz, sz = math.cos(x[7]), math.sin(x[7])
        rot = basis @ np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
        return basis[:, :2] @ x[5:7] + up, rot

    def fun(x):
        c, rot = unpack(x)
        a = x[:3]
        local = (pts - c) @ rot
        # distance to the surface along the ray from the centre
        scale = np.exp(-0.5 * x[3] * log_implicit_value(a, x[3], x[4], local))
        r = w_data * np.linalg.norm(local, axis=1) * (1.0 - scale)
        if tree is None:
            return r
        sp, sn = _grid_surface(a, x[3], x[4], rot, c)
        view = vp - sp
        cos = np.einsum("ij,ij->i", sn, view) / np.linalg.norm(view, axis=1)
        vis = 1.0 / (1.0 + np.exp(-10.0 * cos))
        d, _ = tree.query(sp)
        return np.concatenate([r, vis * d / math.sqrt(len(sp))])

    lo = [A_MIN] * 3 + [EPS_MIN, EPS_MIN, -np.inf, -np.inf, -np.inf]
    hi = [A_MAX] * 3 + [EPS_MAX, EPS_MAX, np.inf, np.inf, np.inf]
    best = None
    for seed_yaw in (initial.yaw, initial.yaw + 0.25 * math.pi):
        c_seed = c0 if seed_yaw == initial.yaw else _footprint(cloud, plane, seed_yaw)[0]
        rot = basis @ rotation_from_rpy(0.0, 0.0, seed_yaw)
        mirrored = np.vstack([pts, 2.0 * c_seed - pts])
        x0 = initialize((mirrored - c_seed) @ rot)
        x0[2] = min(max(0.5 * h, A_MIN), A_MAX)
        x0 = np.concatenate([np.clip(x0, lo[:5], hi[:5]), basis[:, :2].T @ c_seed, [seed_yaw]])
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            sol = least_squares(fun, x0, bounds=(lo, hi), method="trf", x_scale="jac", ftol=1e-6, xtol=1e-6, max_nfev=100)
        if best is None or sol.cost < best.cost:
            best = sol
    center, _ = unpack(best.x)
    if not np.all(np.isfinite(center)) or np.linalg.norm(best.x[5:7] - uv0) > extent:
        log.warning("pose refinement diverged; keeping the footprint centre")
        return ObjectPoseEstimate(c0, initial.yaw, basis, initial.residual)
    yaw = float(best.x[7] % (0.5 * math.pi))
    return ObjectPoseEstimate(center, yaw, basis, initial.residual)


def estimate_pose(
    cluster, plane: PlaneModel, angle_step: float = ANGLE_STEP, center: str = "centroid", viewpoint=None
) -> ObjectPoseEstimate:
    """Centre plus yaw. ``center="centroid"`` uses the point mean; ``"refined"`` see :func:`refine_pose`."""
    if center not in CENTER_METHODS:
        raise ValueError(f"center must be one of {CENTER_METHODS}")
    cloud = cluster.cloud if isinstance(cluster, Cluster) else cluster
    yaw, gap = estimate_yaw(cloud, plane, angle_step)
    pose = ObjectPoseEstimate(centroid(cloud), yaw, plane.basis, gap)
    if center == "refined" and math.isfinite(gap):
        pose = refine_pose(cloud, plane, pose, viewpoint)
    return pose


def mirror_cloud(cluster, pose: ObjectPoseEstimate) -> PointCloud:
    """The cluster plus its point reflection ``2c - p`` through ``pose.center``."""
    cloud = cluster.cloud if isinstance(cluster, Cluster) else cluster
    c = np.asarray(pose.center, dtype=float)
    return cloud.with_points(np.vstack([cloud.points, 2.0 * c - cloud.points]))


@dataclass(frozen=True, eq=False)
class Completion:
    index: int
    pose: ObjectPoseEstimate | None
    cloud: PointCloud | None
    filtered: PointCloud | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def complete_one(
    cluster, plane: PlaneModel, angle_step=ANGLE_STEP, outlier_k=30, outlier_m=1.0, center="centroid", viewpoint=None
):
    """Outlier removal, pose estimation and mirroring for one cluster."""
    cloud = cluster.cloud if isinstance(cluster, Cluster) else cluster
    if outlier_k > 0 and len(cloud) > 2:
        cloud = remove_statistical_outliers(cloud, min(outlier_k, len(cloud) - 1), outlier_m)
    pose = estimate_pose(cloud, plane, angle_step, center, viewpoint)
    if not math.isfinite(pose.residual):
        raise DegenerateHullError("cluster footprint is degenerate")
    return pose, mirror_cloud(cloud, pose), cloud


def complete_all(
    clusters, plane: PlaneModel, angle_step=ANGLE_STEP, outlier_k=30, outlier_m=1.0, center="centroid", viewpoint=None
) -> list[Completion]:
    """Complete every cluster independently; failures are reported per cluster."""
    out = []
    for i, cl in enumerate(clusters):
        try:
            pose, mirrored, filtered = complete_one(cl, plane, angle_step, outlier_k, outlier_m, center, viewpoint)
            out.append(Completion(i, pose, mirrored, filtered))
        except (SqGraspError, ValueError) as exc:
            log.warning("cluster %d: completion failed: %s", i, exc)
            out.append(Completion(i, None, None, None, str(exc)))
    return out

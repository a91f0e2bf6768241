"""Point-cloud value type, ASCII PCD I/O, rigid transforms and simple statistics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateHullError, ParameterError, PCDParseError

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Immutable ``(N, 3)`` array of finite points (m) tagged with a frame label."""

    points: np.ndarray
    frame_id: str = "camera"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ParameterError("point cloud contains non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]

    def subset(self, idx) -> "PointCloud":
        return PointCloud(self.points[idx], self.frame_id)

    def with_points(self, points, frame_id=None) -> "PointCloud":
        return PointCloud(points, self.frame_id if frame_id is None else frame_id)


@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    @classmethod
    def of(cls, points) -> "Aabb":
        pts = points.points if isinstance(points, PointCloud) else np.asarray(points, dtype=float)
        return cls(pts.min(axis=0), pts.max(axis=0))

    @property
    def extent(self) -> np.ndarray:
        return self.max - self.min

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))


# ---------------------------------------------------------------------------
# PCD
# ---------------------------------------------------------------------------

_HEADER_KEYS = ("VERSION", "FIELDS", "SIZE", "TYPE", "COUNT", "WIDTH", "HEIGHT", "VIEWPOINT", "POINTS", "DATA")


def load_pcd(path) -> PointCloud:
    """Read an ASCII PCD with fields ``x y z``.

    Non-finite rows (placeholders in organized captures) are dropped; the
    number dropped is logged and kept in ``cloud.meta["dropped_nonfinite"]``.
    """
    lines = Path(path).read_text(encoding="ascii", errors="replace").splitlines()
    header = {}
    lineno = 0
    data_start = None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, rest = line.partition(" ")
        key = key.upper()
        if key not in _HEADER_KEYS:
            raise PCDParseError(f"unexpected header entry {key!r}", lineno)
        header[key] = (rest.split(), lineno)
        if key == "DATA":
            data_start = lineno
            break
    if data_start is None:
        raise PCDParseError("missing DATA line", lineno or None)
    for key in ("FIELDS", "WIDTH", "HEIGHT", "POINTS"):
        if key not in header:
            raise PCDParseError(f"missing {key} line", data_start)

    fields, fl = header["FIELDS"]
    if [f.lower() for f in fields] != ["x", "y", "z"]:
        raise PCDParseError(f"expected FIELDS x y z, got {' '.join(fields)}", fl)
    for key in ("SIZE", "TYPE", "COUNT"):
        if key in header and len(header[key][0]) != 3:
            raise PCDParseError(f"{key} must list 3 entries", header[key][1])
    if "TYPE" in header and any(t.upper() != "F" for t in header["TYPE"][0]):
        raise PCDParseError("only float (F) fields are supported", header["TYPE"][1])
    fmt, dl = header["DATA"]
    if not fmt or fmt[0].lower() != "ascii":
        raise PCDParseError(f"only DATA ascii is supported, got {' '.join(fmt)}", dl)

    def _int(key):
        vals, ln = header[key]
        try:
            return int(vals[0])
        except (IndexError, ValueError):
            raise PCDParseError(f"{key} must be an integer", ln) from None

    width, height, npoints = _int("WIDTH"), _int("HEIGHT"), _int("POINTS")
    if width * height != npoints:
        raise PCDParseError(f"WIDTH*HEIGHT = {width * height} does not match POINTS = {npoints}", header["POINTS"][1])

    body = lines[data_start:]
    rows = []
    for offset, raw in enumerate(body):
        ln = data_start + offset + 1
        if not raw.strip():
            continue
        parts = raw.split()
        if len(parts) != 3:
            raise PCDParseError(f"expected 3 values, found {len(parts)}", ln)
        try:
            rows.append([float(v) for v in parts])
        except ValueError:
            raise PCDParseError(f"cannot parse {raw.strip()!r} as numbers", ln) from None
    if len(rows) != npoints:
        raise PCDParseError(f"expected {npoints} data rows, found {len(rows)}", len(lines))

    pts = np.array(rows, dtype=float).reshape(-1, 3)
    finite = np.all(np.isfinite(pts), axis=1)
    dropped = int((~finite).sum())
    if dropped:
        log.info("%s: dropped %d non-finite points", path, dropped)
    return PointCloud(pts[finite], "camera", {"dropped_nonfinite": dropped})


def save_pcd(cloud: PointCloud, path) -> None:
    """Write ``cloud`` as ASCII PCD; values use 17 significant digits (exact round trip)."""
    n = len(cloud)
    header = (
        "VERSION .7\nFIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nCOUNT 1 1 1\n"
        f"WIDTH {n}\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS {n}\nDATA ascii\n"
    )
    body = "".join(f"{x:.17g} {y:.17g} {z:.17g}\n" for x, y, z in cloud.points)
    Path(path).write_text(header + body, encoding="ascii")


# ---------------------------------------------------------------------------
# Transforms and statistics
# ---------------------------------------------------------------------------


def check_rigid(T, tol=1e-6) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    if T.shape != (4, 4) or not np.all(np.isfinite(T)):
        raise ParameterError("transform must be a finite 4x4 matrix")
    R = T[:3, :3]
    if (
        not np.allclose(R.T @ R, np.eye(3), atol=tol)
        or abs(np.linalg.det(R) - 1.0) > tol
        or not np.allclose(T[3], [0.0, 0.0, 0.0, 1.0], atol=tol)
    ):
        raise ParameterError("transform is not rigid")
    return T


def invert_rigid(T) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    inv = np.eye(4)
    inv[:3, :3] = T[:3, :3].T
    inv[:3, 3] = -T[:3, :3].T @ T[:3, 3]
    return inv


def transform(cloud: PointCloud, T, frame_id: str | None = None) -> PointCloud:
    """Apply the rigid transform ``p -> R p + t``."""
    T = check_rigid(T)
    pts = cloud.points @ T[:3, :3].T + T[:3, 3]
    return PointCloud(pts, cloud.frame_id if frame_id is None else frame_id)


def centroid(cloud) -> np.ndarray:
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
    if len(pts) == 0:
        raise ParameterError("centroid of an empty cloud")
    return pts.mean(axis=0)


def remove_statistical_outliers(cloud: PointCloud, k: int = 30, m: float = 1.0) -> PointCloud:
    """Drop points whose mean distance to their ``k`` nearest neighbours exceeds mean + m*std."""
    n = len(cloud)
    if k < 1 or k >= n:
        raise ParameterError(f"need 1 <= k < cloud size, got k={k}, n={n}")
    dist, _ = cKDTree(cloud.points).query(cloud.points, k=k + 1)
    mean_d = dist[:, 1:].mean(axis=1)
    mu = mean_d.mean()
    # relative slack so rounding noise cannot split a cloud of equal neighbourhoods
    keep = mean_d <= mu + m * mean_d.std() + 1e-9 * mu
    return cloud.subset(np.flatnonzero(keep))


class CovarianceEigen(NamedTuple):
    values: np.ndarray  # descending
    vectors: np.ndarray  # columns match values
    degenerate: bool


def covariance_eigenvalues(cloud) -> CovarianceEigen:
    """Eigen-decomposition of the sample covariance, eigenvalues descending and clipped at 0."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
    if len(pts) < 2:
        raise ParameterError("covariance needs at least 2 points")
    vals, vecs = np.linalg.eigh(np.cov(pts, rowvar=False))
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    degenerate = bool(vals[2] <= 1e-12 * max(vals[0], 1e-300))
    return CovarianceEigen(vals, vecs[:, order], degenerate)


# ---------------------------------------------------------------------------
# Planar projection and hulls
# ---------------------------------------------------------------------------


def plane_basis(normal) -> np.ndarray:
    """Right-handed 3x3 basis whose columns are (u, v, n); u follows the x axis when possible."""
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    ref = np.array([1.0, 0.0, 0.0])
    if abs(n @ ref) > 0.9:
        ref = np.array([0.0, 1.0, 0.0])
    u = ref - (ref @ n) * n
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    return np.column_stack([u, v, n])


def project_to_plane(cloud, plane) -> np.ndarray:
    """2D in-plane coordinates ``(N, 2)`` of the points, in :func:`plane_basis` order.

    ``plane`` needs ``normal`` and ``offset`` attributes (plane ``n.p + d = 0``).
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
    basis = plane_basis(plane.normal)
    return pts @ basis[:, :2]


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull_2d(points2d) -> np.ndarray:
    """Counter-clockwise hull vertices without collinear points (monotone chain)."""
    pts = np.unique(np.asarray(points2d, dtype=float).reshape(-1, 2), axis=0)
    if len(pts) < 3:
        raise DegenerateHullError("need at least 3 distinct points")
    P = [tuple(p) for p in pts]  # already sorted lexicographically by np.unique

    def chain(seq):
        out = []
        for p in seq:
            while len(out) >= 2 and _cross(out[-2], out[-1], p) <= 0.0:
                out.pop()
            out.append(p)
        return out

    lower = chain(P)
    upper = chain(reversed(P))
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        raise DegenerateHullError("points are collinear")
    hull = np.array(hull)
    if polygon_area(hull) <= 1e-18 * max(1.0, float(np.ptp(pts, axis=0).max()) ** 2):
        raise DegenerateHullError("points are collinear")
    return hull


def polygon_area(poly) -> float:
    """Signed shoelace area; positive for counter-clockwise vertex order."""
    poly = np.asarray(poly, dtype=float)
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def point_in_hull(hull, point, tol=1e-12) -> bool:
    """True when ``point`` lies inside or on the counter-clockwise polygon ``hull``."""
    h = np.asarray(hull, dtype=float)
    nxt = np.roll(h, -1, axis=0)
    cross = (nxt[:, 0] - h[:, 0]) * (point[1] - h[:, 1]) - (nxt[:, 1] - h[:, 1]) * (point[0] - h[:, 0])
    return bool(np.all(cross >= -tol))


def rotate_2d(points2d, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.asarray(points2d, dtype=float) @ np.array([[c, s], [-s, c]])

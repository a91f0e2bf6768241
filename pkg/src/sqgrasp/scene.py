"""Tabletop decomposition: dominant plane removal and Euclidean object clustering."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .cloud import PointCloud, plane_basis
from .errors import NoPlaneError, ParameterError

DIST_THRESH = 0.005
MAX_ITERS = 500
CLUSTER_DIST = 0.02
MIN_SIZE = 100


@dataclass(frozen=True, eq=False)
class PlaneModel:
    """Plane ``n . p + d = 0`` with unit normal ``n``; ``inliers`` index the fitted cloud."""

    normal: np.ndarray
    offset: float
    inliers: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def signed_distance(self, points) -> np.ndarray:
        pts = points.points if isinstance(points, PointCloud) else np.asarray(points, dtype=float)
        return pts @ self.normal + self.offset

    @property
    def basis(self) -> np.ndarray:
        """Columns (u, v, n): in-plane axes and the normal."""
        return plane_basis(self.normal)

    def to_dict(self) -> dict:
        return {"normal": [float(v) for v in self.normal], "offset": float(self.offset), "inlier_count": int(len(self.inliers))}

    @classmethod
    def from_dict(cls, d) -> "PlaneModel":
        n = np.asarray(d["normal"], dtype=float)
        scale = np.linalg.norm(n)
        return cls(n / scale, float(d["offset"]) / scale)


@dataclass(frozen=True, eq=False)
class Cluster:
    cloud: PointCloud
    label: int
    indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


def _orient(normal, offset, viewpoint):
    if viewpoint is None:
        flip = normal[2] < 0.0 or (normal[2] == 0.0 and (normal[1] < 0.0 or (normal[1] == 0.0 and normal[0] < 0.0)))
    else:
        flip = float(np.dot(normal, viewpoint)) + offset < 0.0
    return (-normal, -offset) if flip else (normal, offset)


def _refine(points):
    mean = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - mean, full_matrices=False)
    n = vt[-1]
    return n, -float(n @ mean)


def fit_table_plane(
    cloud: PointCloud,
    dist_thresh: float = DIST_THRESH,
    max_iters: int = MAX_ITERS,
    seed: int = 0,
    viewpoint=None,
    min_inlier_ratio: float = 0.3,
) -> PlaneModel:
    """RANSAC plane with least-squares refinement on the consensus set.

    The normal is oriented toward ``viewpoint`` when given (e.g. the sensor
    origin), otherwise so that its z component is non-negative.
    """
    pts = cloud.points
    n = len(pts)
    if n < 3:
        raise ParameterError("plane fit needs at least 3 points")
    if dist_thresh <= 0.0:
        raise ParameterError("dist_thresh must be > 0")
    rng = np.random.default_rng(seed)
    best_count, best = -1, None
    chunk = 64
    done = 0
    while done < max_iters:
        m = min(chunk, max_iters - done)
        done += m
        idx = np.stack([rng.choice(n, size=3, replace=False) for _ in range(m)])
        p0, p1, p2 = pts[idx[:, 0]], pts[idx[:, 1]], pts[idx[:, 2]]
        normals = np.cross(p1 - p0, p2 - p0)
        norms = np.linalg.norm(normals, axis=1)
        ok = norms > 1e-12
        if not np.any(ok):
            continue
        normals = normals[ok] / norms[ok, None]
        offsets = -np.einsum("ij,ij->i", normals, p0[ok])
        counts = (np.abs(pts @ normals.T + offsets) <= dist_thresh).sum(axis=0)
        j = int(np.argmax(counts))
        if counts[j] > best_count:
            best_count, best = int(counts[j]), (normals[j], offsets[j])
    if best is None:
        raise NoPlaneError("all RANSAC samples were degenerate")

    normal, offset = best
    inl = np.flatnonzero(np.abs(pts @ normal + offset) <= dist_thresh)
    if len(inl) >= 3:
        normal, offset = _refine(pts[inl])
        inl = np.flatnonzero(np.abs(pts @ normal + offset) <= dist_thresh)
    if len(inl) < min_inlier_ratio * n:
        raise NoPlaneError(f"best plane has {len(inl)}/{n} inliers (< {min_inlier_ratio:.0%})")
    normal, offset = _orient(np.asarray(normal, dtype=float), float(offset), viewpoint)
    return PlaneModel(normal, offset, inl)


def split_by_plane(cloud: PointCloud, plane: PlaneModel, dist_thresh: float = DIST_THRESH):
    """Index arrays ``(inliers, above, below)``; together they partition the cloud."""
    sd = plane.signed_distance(cloud)
    inl = np.abs(sd) <= dist_thresh
    return np.flatnonzero(inl), np.flatnonzero(~inl & (sd > 0.0)), np.flatnonzero(~inl & (sd < 0.0))


def cluster_objects(cloud: PointCloud, cluster_dist: float = CLUSTER_DIST, min_size: int = MIN_SIZE) -> list[Cluster]:
    """Single-linkage Euclidean clusters (edges for pairs within ``cluster_dist``), largest first."""
    if cluster_dist <= 0.0:
        raise ParameterError("cluster_dist must be > 0")
    n = len(cloud)
    if n == 0:
        return []
    pairs = cKDTree(cloud.points).query_pairs(cluster_dist, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    groups = [np.flatnonzero(labels == lab) for lab in np.unique(labels)]
    groups = [g for g in groups if len(g) >= min_size]
    # deterministic under permutation: size, then spatial position of the lowest point
    groups.sort(key=lambda g: (-len(g), *cloud.points[g].min(axis=0)))
    return [Cluster(cloud.subset(g), label, g) for label, g in enumerate(groups)]

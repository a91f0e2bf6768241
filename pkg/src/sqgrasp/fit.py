"""Bounded Levenberg-Marquardt recovery of the five superquadric shape parameters.

The pose comes from the completion step and stays fixed; only
``(a1, a2, a3, eps1, eps2)`` are optimised.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .cloud import PointCloud, covariance_eigenvalues
from .errors import ParameterError
from .sq_core import RigidPose, Superquadric, log_implicit_value, sample_surface_arrays

A_MIN = 1e-3
A_MAX = 1.0
EPS_MIN = 0.1
EPS_MAX = 1.9


@dataclass(frozen=True)
class FitOptions:
    max_iter: int = 100
    lambda0: float = 1e-3
    ftol: float = 1e-8
    xtol: float = 1e-10
    fd_step: float = 1e-6
    op_weight: bool = False
    lower: tuple = (A_MIN, A_MIN, A_MIN, EPS_MIN, EPS_MIN)
    upper: tuple = (A_MAX, A_MAX, A_MAX, EPS_MAX, EPS_MAX)


@dataclass(frozen=True, eq=False)
class FitResult:
    sq: Superquadric
    cost: float
    iterations: int
    time_s: float
    converged: bool
    initial: np.ndarray = field(default_factory=lambda: np.zeros(5))
    cost_history: tuple = ()
    trajectory: tuple = ()

    def to_dict(self) -> dict:
        return {
            "a1": self.sq.a1,
            "a2": self.sq.a2,
            "a3": self.sq.a3,
            "eps1": self.sq.eps1,
            "eps2": self.sq.eps2,
            "pose": self.sq.pose.to_dict(),
            "cost": float(self.cost),
            "iterations": int(self.iterations),
            "time_s": float(self.time_s),
            "converged": bool(self.converged),
        }


def _residuals(params, p_local, op_norm=None):
    a = params[:3]
    e1, e2 = params[3], params[4]
    scaled = np.exp(e1 * log_implicit_value(a, e1, e2, p_local))
    r = math.sqrt(a[0] * a[1] * a[2]) * (scaled - 1.0)
    return r if op_norm is None else r * op_norm


def residual(sq: Superquadric, p_local, op_weight: bool = False):
    """Size-normalised radial residual ``sqrt(a1 a2 a3) (f^eps1 - 1)``; zero on the surface.

    With ``op_weight`` each residual is also multiplied by the point's distance
    from the centre.
    """
    p = np.asarray(p_local, dtype=float)
    r = _residuals(sq.shape, p.reshape(-1, 3), np.linalg.norm(p.reshape(-1, 3), axis=1) if op_weight else None)
    return float(r[0]) if p.ndim == 1 else r.reshape(p.shape[:-1])


def initialize(cloud_local) -> np.ndarray:
    """Start values: semi-axes from covariance eigenvalues, exponents 1.

    For a solid or shell symmetric about the centre, ``a ~ sqrt(3 * lambda)``
    along each principal direction. Each eigenvector is assigned to the local
    axis it is most aligned with.
    """
    pts = cloud_local.points if isinstance(cloud_local, PointCloud) else np.asarray(cloud_local, dtype=float)
    eig = covariance_eigenvalues(pts)
    align = np.abs(eig.vectors)  # rows: local axes, cols: eigenvectors
    best = max(itertools.permutations(range(3)), key=lambda perm: sum(align[perm[j], j] for j in range(3)))
    a = np.empty(3)
    for j, axis in enumerate(best):
        a[axis] = math.sqrt(3.0 * eig.values[j])
    a = np.clip(a, A_MIN, A_MAX)
    return np.concatenate([a, [1.0, 1.0]])


def _as_pose(pose) -> RigidPose:
    if hasattr(pose, "to_rigid_pose"):
        return pose.to_rigid_pose()
    if isinstance(pose, RigidPose):
        return pose
    return RigidPose.from_matrix(pose)


def fit_lm(cloud: PointCloud, pose, options: FitOptions | None = None, x0=None) -> FitResult:
    """Fit the shape of a superquadric posed at ``pose`` to ``cloud``.

    Marquardt-scaled damping on the normal equations with a forward-difference
    Jacobian; parameters are projected onto the box bounds after every step.
    Never raises for non-convergence; check ``converged``.
    """
    opts = options or FitOptions()
    t0 = time.perf_counter()
    pose = _as_pose(pose)
    if len(cloud) < 10:
        raise ParameterError("fit needs at least 10 points")
    p_local = (cloud.points - pose.translation) @ pose.rotation
    op_norm = np.linalg.norm(p_local, axis=1) if opts.op_weight else None
    lo, hi = np.array(opts.lower, dtype=float), np.array(opts.upper, dtype=float)

    x = np.clip(initialize(p_local) if x0 is None else np.asarray(x0, dtype=float), lo, hi)
    r = _residuals(x, p_local, op_norm)
    cost = float(r @ r)
    lam = opts.lambda0
    history = [cost]
    trajectory = [x.copy()]
    converged = False
    it = 0
    while it < opts.max_iter:
        it += 1
        # forward differences, stepping inward at the upper bound
        J = np.empty((len(r), 5))
        for j in range(5):
            h = opts.fd_step * max(abs(x[j]), 1e-3)
            xp = x.copy()
            if xp[j] + h > hi[j]:
                h = -h
            xp[j] += h
            J[:, j] = (_residuals(xp, p_local, op_norm) - r) / h
        JtJ = J.T @ J
        g = J.T @ r
        diag = np.maximum(np.diag(JtJ), 1e-12)
        accepted = False
        for _ in range(12):
            try:
                step = np.linalg.solve(JtJ + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            x_new = np.clip(x + step, lo, hi)
            r_new = _residuals(x_new, p_local, op_norm)
            cost_new = float(r_new @ r_new)
            if math.isfinite(cost_new) and cost_new < cost:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            converged = True  # no descent direction left at this damping
            break
        dx = x_new - x
        dcost = cost - cost_new
        x, r, cost = x_new, r_new, cost_new
        lam = max(lam / 10.0, 1e-12)
        history.append(cost)
        trajectory.append(x.copy())
        if dcost <= opts.ftol * max(cost, 1e-300) or np.linalg.norm(dx) < opts.xtol or cost == 0.0:
            converged = True
            break

    sq = Superquadric(*x, pose=pose)
    return FitResult(
        sq, cost, it, time.perf_counter() - t0, converged, trajectory[0], tuple(history), tuple(trajectory)
    )


def _radial_gap(src: Superquadric, dst: Superquadric, d: float) -> np.ndarray:
    """Relative radial gap from each surface sample of ``src`` to ``dst`` along rays from dst's centre."""
    pts_world = src.to_world(sample_surface_arrays(src, d)[2])
    v = dst.to_local(pts_world)
    norm = np.linalg.norm(v, axis=1)
    ok = norm > 1e-12
    logf = log_implicit_value(dst.axes, dst.eps1, dst.eps2, v[ok])
    # along the ray, f scales as lambda^(2/eps1): the surface sits at |v| * f^(-eps1/2)
    r_dst = norm[ok] * np.exp(-0.5 * dst.eps1 * logf)
    return np.abs(norm[ok] - r_dst) / norm[ok]


def radial_error(sq_truth: Superquadric, sq_fit: Superquadric, d_sample: float | None = None) -> float:
    """Mean relative radial distance between two superquadric surfaces, in percent.

    Computed truth-to-fit and fit-to-truth and averaged.
    """
    if d_sample is None:
        d_sample = min(sq_truth.a1, sq_truth.a2, sq_truth.a3, sq_fit.a1, sq_fit.a2, sq_fit.a3) / 4.0
    fwd = _radial_gap(sq_truth, sq_fit, d_sample)
    bwd = _radial_gap(sq_fit, sq_truth, d_sample)
    return 100.0 * 0.5 * (float(fwd.mean()) + float(bwd.mean()))

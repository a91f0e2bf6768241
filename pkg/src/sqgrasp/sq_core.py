"""Closed-form superellipsoid geometry.

Everything here is a pure function of immutable values: implicit and
parametric evaluation, near-uniform surface sampling, cross-section
curvature and normals, and the support function used for gripper depth.

Powers of cosine and sine always use the signed convention
``sgn(u) * |u| ** e`` so that all octants of the surface are reachable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import DomainError, ParameterError, SingularityError

Plane = Literal["xz", "yz", "xy"]

HALF_PI = 0.5 * math.pi
# cos(pi/2) evaluates to ~6e-17, which raised to a small exponent is far from 0.
_ZERO_SNAP = 1e-15
# Parameter distance from an end of the quarter curve where sampling
# switches from the first-order step to the end-point limit form.
_SWITCH = 1e-2


def spow(base, exponent):
    """Signed power ``sgn(u) |u|^e``, elementwise."""
    base = np.asarray(base, dtype=float)
    return np.sign(base) * np.abs(base) ** exponent


def _snapped_trig(angle):
    angle = np.asarray(angle, dtype=float)
    c = np.cos(angle)
    s = np.sin(angle)
    c = np.where(np.abs(c) < _ZERO_SNAP, 0.0, c)
    s = np.where(np.abs(s) < _ZERO_SNAP, 0.0, s)
    return c, s


def rotation_from_rpy(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Rotation for roll, pitch, yaw about the fixed x, y, z axes (in that order)."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    return rz @ ry @ rx


def rpy_from_rotation(rot: np.ndarray) -> tuple[float, float, float]:
    rot = np.asarray(rot, dtype=float)
    pitch = math.asin(max(-1.0, min(1.0, -rot[2, 0])))
    if abs(math.cos(pitch)) > 1e-12:
        roll = math.atan2(rot[2, 1], rot[2, 2])
        yaw = math.atan2(rot[1, 0], rot[0, 0])
    else:
        # gimbal lock: only roll - yaw (or roll + yaw) is observable
        roll = 0.0
        yaw = math.atan2(-rot[0, 1], rot[1, 1])
    return roll, pitch, yaw


@dataclass(frozen=True)
class RigidPose:
    """Position (m) plus roll/pitch/yaw (rad) about fixed x, y, z axes."""

    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        pos = tuple(float(v) for v in np.asarray(self.position, dtype=float).reshape(3))
        vals = pos + (self.roll, self.pitch, self.yaw)
        if not all(math.isfinite(v) for v in vals):
            raise DomainError(f"non-finite pose value in {vals}")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "roll", float(self.roll))
        object.__setattr__(self, "pitch", float(self.pitch))
        object.__setattr__(self, "yaw", float(self.yaw))

    @property
    def rotation(self) -> np.ndarray:
        return rotation_from_rpy(self.roll, self.pitch, self.yaw)

    @property
    def translation(self) -> np.ndarray:
        return np.array(self.position)

    @property
    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.position
        return T

    @classmethod
    def from_matrix(cls, T) -> "RigidPose":
        T = np.asarray(T, dtype=float)
        roll, pitch, yaw = rpy_from_rotation(T[:3, :3])
        return cls(tuple(T[:3, 3]), roll, pitch, yaw)

    def to_dict(self) -> dict:
        x, y, z = self.position
        return {"x": x, "y": y, "z": z, "roll": self.roll, "pitch": self.pitch, "yaw": self.yaw}

    @classmethod
    def from_dict(cls, d: dict) -> "RigidPose":
        return cls(
            (d.get("x", 0.0), d.get("y", 0.0), d.get("z", 0.0)),
            d.get("roll", 0.0),
            d.get("pitch", 0.0),
            d.get("yaw", 0.0),
        )


@dataclass(frozen=True)
class Superquadric:
    """Superellipsoid with semi-axes ``a1, a2, a3`` (m), exponents ``eps1, eps2`` and a pose.

    ``eps1`` shapes the cross-sections containing the local z axis,
    ``eps2`` the sections parallel to the local xy plane.
    """

    a1: float
    a2: float
    a3: float
    eps1: float
    eps2: float
    pose: RigidPose = field(default_factory=RigidPose)

    def __post_init__(self):
        for name in ("a1", "a2", "a3", "eps1", "eps2"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v <= 0.0:
                raise ParameterError(f"{name} must be finite and > 0, got {v}")
            object.__setattr__(self, name, v)

    @property
    def axes(self) -> np.ndarray:
        return np.array([self.a1, self.a2, self.a3])

    @property
    def shape(self) -> np.ndarray:
        """The five shape parameters ``(a1, a2, a3, eps1, eps2)``."""
        return np.array([self.a1, self.a2, self.a3, self.eps1, self.eps2])

    def with_shape(self, params) -> "Superquadric":
        a1, a2, a3, e1, e2 = (float(v) for v in params)
        return Superquadric(a1, a2, a3, e1, e2, self.pose)

    def to_local(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return (points - self.pose.translation) @ self.pose.rotation

    def to_world(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return points @ self.pose.rotation.T + self.pose.translation

    def to_dict(self) -> dict:
        return {
            "a1": self.a1,
            "a2": self.a2,
            "a3": self.a3,
            "eps1": self.eps1,
            "eps2": self.eps2,
            "pose": self.pose.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Superquadric":
        return cls(d["a1"], d["a2"], d["a3"], d["eps1"], d["eps2"], RigidPose.from_dict(d.get("pose", {})))


@dataclass(frozen=True)
class SurfaceSample:
    eta: float
    omega: float
    point: tuple[float, float, float]


def _check_finite(arr, what="input"):
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"non-finite {what}")


def implicit_value(sq: Superquadric, p_local) -> np.ndarray | float:
    """Inside-outside function: < 1 inside, 1 on the surface, > 1 outside.

    Accepts a single point ``(3,)`` or an array ``(..., 3)`` in the local frame.
    """
    p = np.asarray(p_local, dtype=float)
    _check_finite(p, "point")
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    xy = np.abs(x / sq.a1) ** (2.0 / sq.eps2) + np.abs(y / sq.a2) ** (2.0 / sq.eps2)
    f = xy ** (sq.eps2 / sq.eps1) + np.abs(z / sq.a3) ** (2.0 / sq.eps1)
    return float(f) if f.ndim == 0 else f


def log_implicit_value(axes, eps1, eps2, p_local) -> np.ndarray:
    """``log f`` computed without overflow for points far outside tiny shapes."""
    p = np.asarray(p_local, dtype=float)
    with np.errstate(divide="ignore"):
        lx = np.log(np.abs(p[..., 0] / axes[0]))
        ly = np.log(np.abs(p[..., 1] / axes[1]))
        lz = np.log(np.abs(p[..., 2] / axes[2]))
    lxy = np.logaddexp(2.0 / eps2 * lx, 2.0 / eps2 * ly)
    return np.logaddexp(eps2 / eps1 * lxy, 2.0 / eps1 * lz)


def parametric_point(sq: Superquadric, eta, omega) -> np.ndarray:
    """Surface point at latitude ``eta`` in [-pi/2, pi/2], longitude ``omega`` in [-pi, pi]."""
    eta = np.asarray(eta, dtype=float)
    omega = np.asarray(omega, dtype=float)
    _check_finite(eta, "eta")
    _check_finite(omega, "omega")
    ce, se = _snapped_trig(eta)
    cw, sw = _snapped_trig(omega)
    ce = spow(ce, sq.eps1)
    return np.stack(
        np.broadcast_arrays(
            sq.a1 * ce * spow(cw, sq.eps2),
            sq.a2 * ce * spow(sw, sq.eps2),
            sq.a3 * spow(se, sq.eps1),
        ),
        axis=-1,
    )


def surface_normal(sq: Superquadric, eta, omega) -> np.ndarray:
    """Outward unit normal at the parametric point (local frame)."""
    ce, se = _snapped_trig(eta)
    cw, sw = _snapped_trig(omega)
    e1, e2 = 2.0 - sq.eps1, 2.0 - sq.eps2
    ce = spow(ce, e1)
    n = np.stack(
        np.broadcast_arrays(
            ce * spow(cw, e2) / sq.a1,
            ce * spow(sw, e2) / sq.a2,
            spow(se, e1) / sq.a3,
        ),
        axis=-1,
    )
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    return n / np.where(norm == 0.0, 1.0, norm)


def implicit_gradient(sq: Superquadric, p_local, step=None) -> np.ndarray:
    """Gradient of the implicit function by central differences."""
    p = np.asarray(p_local, dtype=float)
    h = 1e-6 * min(sq.a1, sq.a2, sq.a3) if step is None else step
    grad = np.empty(p.shape)
    for k in range(3):
        dp = np.zeros(3)
        dp[k] = h
        grad[..., k] = (implicit_value(sq, p + dp) - implicit_value(sq, p - dp)) / (2.0 * h)
    return grad


def support(sq: Superquadric, direction_local) -> float:
    """Largest ``p . u`` over the solid, for a local-frame direction ``u``.

    Closed form through the dual exponents for convex shapes (eps < 2);
    dense surface search otherwise.
    """
    u = np.asarray(direction_local, dtype=float)
    u = u / np.linalg.norm(u)
    if sq.eps1 < 2.0 and sq.eps2 < 2.0:
        p = 2.0 / (2.0 - sq.eps2)
        q = 2.0 / (2.0 - sq.eps1)
        ax, ay, az = np.abs(sq.axes * u)
        xy = (ax**p + ay**p) ** (1.0 / p)
        return float((xy**q + az**q) ** (1.0 / q))
    eta, omega = np.meshgrid(np.linspace(-HALF_PI, HALF_PI, 721), np.linspace(-math.pi, math.pi, 1441))
    return float(np.max(parametric_point(sq, eta, omega) @ u))


# ---------------------------------------------------------------------------
# Planar cross-sections
# ---------------------------------------------------------------------------


def section(sq: Superquadric, plane: Plane) -> tuple[float, float, float]:
    """``(A, B, eps)`` of the superellipse ``(A cos^eps t, B sin^eps t)`` cut by a principal plane.

    ``xz`` is the section at omega = 0, ``yz`` at omega = pi/2 (both governed by eps1),
    ``xy`` the equatorial section governed by eps2, parametrised by omega.
    """
    if plane == "xz":
        return sq.a1, sq.a3, sq.eps1
    if plane == "yz":
        return sq.a2, sq.a3, sq.eps1
    if plane == "xy":
        return sq.a1, sq.a2, sq.eps2
    raise ParameterError(f"unknown plane {plane!r}")


def superellipse_point(A, B, eps, t) -> np.ndarray:
    c, s = _snapped_trig(t)
    return np.stack(np.broadcast_arrays(A * spow(c, eps), B * spow(s, eps)), axis=-1)


def _check_section_param(eps, t, allow_ends):
    t = float(t)
    if not math.isfinite(t):
        raise DomainError("non-finite angle")
    if t < 0.0 or t > HALF_PI:
        raise ParameterError(f"angle {t} outside [0, pi/2]")
    at_end = t == 0.0 or t == HALF_PI
    if at_end and not allow_ends:
        raise SingularityError(f"parametrisation is singular at t={t} for eps={eps}")
    return t


def superellipse_curvature(A: float, B: float, eps: float, t: float) -> float:
    """Signed curvature of ``(A c^eps, B s^eps)`` at ``t`` in the first quadrant.

    Uses ``(x'y'' - y'x'') / (x'^2 + y'^2)^(3/2)`` with the derivatives taken
    analytically; the common ``eps^2 (cs)^(eps-1)`` factor is cancelled so the
    expression stays finite for eps = 1 at the axes. Positive for eps < 2.
    """
    t = _check_section_param(eps, t, allow_ends=(eps == 1.0))
    c, s = math.cos(t), math.sin(t)
    if abs(c) < _ZERO_SNAP:
        c = 0.0
    if abs(s) < _ZERO_SNAP:
        s = 0.0
    num = A * B * (2.0 - eps) * (c * s) ** (eps - 1.0)
    speed2 = A * A * c ** (2.0 * eps - 2.0) * s * s + B * B * s ** (2.0 * eps - 2.0) * c * c
    return num / (eps * speed2**1.5)


def superellipse_normal(A: float, B: float, eps: float, t: float) -> np.ndarray:
    """Outward unit normal of ``(A c^eps, B s^eps)``; axis-aligned at the ends for eps <= 2."""
    t = _check_section_param(eps, t, allow_ends=(eps <= 2.0))
    c, s = math.cos(t), math.sin(t)
    if abs(c) < _ZERO_SNAP:
        c = 0.0
    if abs(s) < _ZERO_SNAP:
        s = 0.0
    # tangent ~ (-A c^(eps-1) s, B s^(eps-1) c); rotate clockwise and drop (cs)^(eps-1)
    n = np.array([B * c ** (2.0 - eps), A * s ** (2.0 - eps)])
    return n / np.linalg.norm(n)


def curvature_at(sq: Superquadric, eta: float, plane: Plane = "xz") -> float:
    """Curvature (1/m) of the principal cross-section at parameter ``eta``.

    For the ``xy`` section the parameter is the longitude omega.
    """
    return superellipse_curvature(*section(sq, plane), eta)


def normal_at(sq: Superquadric, eta: float, plane: Plane = "xz") -> np.ndarray:
    """Unit outward normal of the principal cross-section, in that plane's 2D coordinates."""
    return superellipse_normal(*section(sq, plane), eta)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def _quarter_xy(A, B, eps, t):
    # sin(t) is exact for tiny t, so only cos(pi/2) ~ 6e-17 needs snapping
    c = 0.0 if t >= HALF_PI else math.cos(t)
    return A * c**eps, B * math.sin(t) ** eps


def _first_order_step(A, B, eps, t, d):
    c, s = math.cos(t), math.sin(t)
    # d / |r'(t)|, the chord-to-angle ratio of the tangent approximation
    return d / (eps * math.sqrt(A * A * c ** (2 * eps - 2) * s * s + B * B * s ** (2 * eps - 2) * c * c))


def _proposed_step(A, B, eps, t, d):
    if t < _SWITCH:
        # near t = 0 the curve is y ~ B t^eps: solve B((t + dt)^eps - t^eps) = d
        return (d / B + t**eps) ** (1.0 / eps) - t
    return _first_order_step(A, B, eps, t, d)


def _next_param(A, B, eps, t, d):
    """Smallest t' > t with chord(t, t') ~= d, starting from the closed-form step."""
    x0, y0 = _quarter_xy(A, B, eps, t)

    def chord(u):
        x, y = _quarter_xy(A, B, eps, u)
        return math.hypot(x - x0, y - y0)

    dt = _proposed_step(A, B, eps, t, d)
    if not math.isfinite(dt) or dt <= 0.0:
        dt = 1e-12
    u = min(t + dt, HALF_PI)
    g = chord(u)
    if 0.8 * d <= g <= 1.25 * d:
        return u
    if g < d:
        lo, hi = u, u
        while hi < HALF_PI:
            hi = min(t + 2.0 * (hi - t), HALF_PI)
            if chord(hi) >= d:
                break
            lo = hi
        if chord(hi) < d:
            return hi
    else:
        lo, hi = t, u
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        g = chord(mid)
        if abs(g - d) <= 0.05 * d:
            return mid
        if g < d:
            lo = mid
        else:
            hi = mid
    return hi


def _half_sweep(A, B, eps, d):
    ts = [0.0]
    t = 0.0
    limit = 0.25 * math.pi
    while True:
        t = _next_param(A, B, eps, t, d)
        if t >= limit:
            return ts
        ts.append(t)


def _superellipse_trig(A, B, eps, d) -> list[tuple[float, float, float]]:
    """``(t, cos t, sin t)`` nodes of :func:`superellipse_params`.

    The backward half is swept in its own parameter ``phi = pi/2 - t``. For
    small exponents the first steps are far below the float spacing near
    pi/2, so the trig values are carried from ``phi`` instead of being
    recomputed from the rounded ``t``.
    """
    fwd = _half_sweep(A, B, eps, d)
    bwd = _half_sweep(B, A, eps, d)

    def chord(t0, t1):
        x0, y0 = _quarter_xy(A, B, eps, t0)
        x1, y1 = _quarter_xy(A, B, eps, t1)
        return math.hypot(x1 - x0, y1 - y0)

    t_f, t_b = fwd[-1], HALF_PI - bwd[-1]
    gap = chord(t_f, t_b)
    if gap < 0.5 * d and len(fwd) + len(bwd) > 2:
        if len(fwd) > 1:
            fwd.pop()
        else:
            bwd.pop()
    elif gap > 1.5 * d:
        lo, hi = t_f, t_b
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            a, b = chord(t_f, mid), chord(mid, t_b)
            if abs(a - b) <= 1e-3 * d or mid in (lo, hi):
                break
            if a < b:
                lo = mid
            else:
                hi = mid
        fwd.append(mid)
    nodes = [(t, math.cos(t), math.sin(t)) for t in fwd]
    nodes += [(HALF_PI - phi, math.sin(phi), math.cos(phi)) for phi in reversed(bwd)]
    return nodes


def superellipse_params(A: float, B: float, eps: float, d: float) -> list[float]:
    """Parameters in [0, pi/2] (ends included) spaced about ``d`` in chord length.

    Swept forward from 0 and backward from pi/2, meeting near pi/4.
    """
    return [t for t, _, _ in _superellipse_trig(A, B, eps, d)]


def _ring(quarter):
    """Close first-quadrant nodes [0, ..., pi/2] into a full ring ordered 0 -> pi -> -pi -> 0."""
    q2 = [(math.pi - w, -c, s) for w, c, s in reversed(quarter[:-1])]
    q3 = [(-math.pi + w, -c, -s) for w, c, s in quarter[1:]]
    q4 = [(-w, c, -s) for w, c, s in reversed(quarter[1:-1])]
    return quarter + q2 + q3 + q4


def sample_surface_arrays(sq: Superquadric, d: float):
    """``(eta, omega, points)`` arrays of a near-uniform sampling with spacing ``d`` (m).

    Samples are grouped in latitude rings ordered by ascending eta; within a
    ring the longitudes run once around the closed loop. Points are built
    from the sweep's exact trig values, so they stay spaced even where the
    returned angles round to the poles.
    """
    if not math.isfinite(d) or d <= 0.0 or d >= min(sq.a1, sq.a2, sq.a3):
        raise ParameterError(f"spacing d={d} must be in (0, min semi-axis)")
    big = max(sq.a1, sq.a2)
    lat = _superellipse_trig(big, sq.a3, sq.eps1, d)
    rings = []
    for _, ce, _ in lat:
        c = ce**sq.eps1
        A, B = sq.a1 * c, sq.a2 * c
        if math.hypot(A, B) < 0.5 * d:
            rings.append([(0.0, 1.0, 0.0)])
        else:
            rings.append(_ring(_superellipse_trig(A, B, sq.eps2, d)))
    order = [(i, -1.0) for i in range(len(lat) - 1, 0, -1)] + [(i, 1.0) for i in range(len(lat))]
    rows = []
    for i, sign in order:
        t, ce, se = lat[i]
        rows.extend((sign * t, ce, sign * se, w, cw, sw) for w, cw, sw in rings[i])
    eta, ce, se, omega, cw, sw = np.array(rows).T
    ce = spow(ce, sq.eps1)
    pts = np.column_stack(
        [sq.a1 * ce * spow(cw, sq.eps2), sq.a2 * ce * spow(sw, sq.eps2), sq.a3 * spow(se, sq.eps1)]
    )
    return eta, omega, pts


def sample_surface(sq: Superquadric, d: float) -> list[SurfaceSample]:
    """Near-uniform surface samples at arclength spacing ``d`` (local frame)."""
    eta, omega, pts = sample_surface_arrays(sq, d)
    return [SurfaceSample(float(e), float(w), tuple(p)) for e, w, p in zip(eta, omega, pts)]


def sample_points(sq: Superquadric, d: float, world: bool = False) -> np.ndarray:
    pts = sample_surface_arrays(sq, d)[2]
    return sq.to_world(pts) if world else pts

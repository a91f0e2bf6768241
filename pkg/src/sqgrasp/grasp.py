"""Antipodal two-finger grasps computed from superquadric geometry.

Conventions
-----------
``s_a`` / ``s_W`` is the approach axis pointing from the object toward the
gripper, so the fingers travel along ``-s_W``. A top-down grasp has
``s_W = +Z_W``. The gripper's ``alpha`` bounds ``angle(s_W, Z_W)``, and any
``s_W`` with a negative ``Z_W`` component would have to come through the table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .cloud import check_rigid
from .sq_core import (
    HALF_PI,
    RigidPose,
    Superquadric,
    rpy_from_rotation,
    superellipse_normal,
    superellipse_point,
    support,
)

ROTATION_STEP = math.radians(15.0)
ANTIPODAL_THRESHOLD = 0.5
_GRID = 1000
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

# base approach axis index -> (section plane, in-plane axis indices)
_SECTIONS = {2: ("xy", (0, 1)), 0: ("yz", (1, 2)), 1: ("xz", (0, 2))}

REASONS = ("through-table", "verticality", "depth", "width")


@dataclass(frozen=True)
class GripperSpec:
    """Two-finger gripper: max opening ``width`` (m), finger ``depth`` (m), max tilt ``alpha`` (rad)."""

    width: float
    depth: float
    alpha: float

    def __post_init__(self):
        if not (self.width > 0 and self.depth > 0):
            raise ValueError("gripper width and depth must be > 0")
        if not (0.0 < self.alpha <= HALF_PI + 1e-12):
            raise ValueError("alpha must be in (0, pi/2]")

    @classmethod
    def from_dict(cls, d) -> "GripperSpec":
        return cls(float(d["width_m"]), float(d["depth_m"]), math.radians(float(d["alpha_deg"])))

    def to_dict(self) -> dict:
        return {"width_m": self.width, "depth_m": self.depth, "alpha_deg": math.degrees(self.alpha)}


# ---------------------------------------------------------------------------
# Antipodal search in a cross-section
# ---------------------------------------------------------------------------


class AntipodalSolution(NamedTuple):
    eta: float
    residual: float  # 1 - |cos| of the angle between the normal line and the ray to the origin
    objective: float
    mirror_eta: float  # the reflected contact (-x, z) of the same section


def antipodal_objective(a1, a3, eps1, eta):
    """Distance from the origin to the tangent line at ``eta``, relative to min(a1, a3), minus 1.

    Stationary points are exactly the parameters whose normal line passes
    through the origin; the minimum is the narrowest antipodal pair.
    """
    eta = np.asarray(eta, dtype=float)
    c, s = np.cos(eta), np.sin(eta)
    m = np.sqrt(a3 * a3 * c ** (4.0 - 2.0 * eps1) + a1 * a1 * s ** (4.0 - 2.0 * eps1))
    return a1 * a3 / (min(a1, a3) * m) - 1.0


def antipodal_residual(a1, a3, eps1, eta) -> float:
    p = superellipse_point(a1, a3, eps1, eta)
    n = superellipse_normal(a1, a3, eps1, eta)
    return float(1.0 - abs(p @ n) / np.linalg.norm(p))


def antipodal_eta_search(a1: float, a3: float, eps1: float) -> AntipodalSolution:
    """Minimise :func:`antipodal_objective` over (0, pi/2).

    A uniform grid scan seeds a golden-section search in the bracket around
    the best grid node. A flat objective (circle) returns pi/4.
    """
    grid = (np.arange(_GRID) + 0.5) * (HALF_PI / _GRID)
    vals = antipodal_objective(a1, a3, eps1, grid)
    if np.ptp(vals) < 1e-12:
        eta = 0.25 * math.pi
    else:
        k = int(np.argmin(vals))
        lo = grid[k - 1] if k > 0 else 0.0
        hi = grid[k + 1] if k < _GRID - 1 else HALF_PI
        lo = max(lo, 1e-15)
        hi = min(hi, HALF_PI - 1e-15)
        f = lambda t: float(antipodal_objective(a1, a3, eps1, t))  # noqa: E731
        x1 = hi - _GOLDEN * (hi - lo)
        x2 = lo + _GOLDEN * (hi - lo)
        f1, f2 = f(x1), f(x2)
        while hi - lo > 1e-12:
            if f1 <= f2:
                hi, x2, f2 = x2, x1, f1
                x1 = hi - _GOLDEN * (hi - lo)
                f1 = f(x1)
            else:
                lo, x1, f1 = x1, x2, f2
                x2 = lo + _GOLDEN * (hi - lo)
                f2 = f(x2)
        eta = 0.5 * (lo + hi)
    return AntipodalSolution(eta, antipodal_residual(a1, a3, eps1, eta), float(antipodal_objective(a1, a3, eps1, eta)), math.pi - eta)


# ---------------------------------------------------------------------------
# Contact selection
# ---------------------------------------------------------------------------


class ContactChoice(NamedTuple):
    p_a: np.ndarray  # local contact point, the pair is +/- p_a
    rule: str
    penalty: bool  # True when the antipodal search failed and axis contacts were used

    @property
    def homogeneous(self) -> np.ndarray:
        """The pair ``(+p_a, 1)`` and ``(-p_a, 1)`` as rows."""
        return np.array([[*self.p_a, 1.0], [*(-self.p_a), 1.0]])

    @property
    def span(self) -> float:
        return 2.0 * float(np.linalg.norm(self.p_a))


def _section_contact(A, B, eps):
    """In-plane contact ``(u, v)`` from the lookup table by exponent and semi-axes."""
    equal = math.isclose(A, B, rel_tol=1e-9)
    shorter = (0.0, B) if B < A else (A, 0.0)
    if eps < 1.0 or math.isclose(eps, 1.0, abs_tol=1e-9):
        if equal:
            return (A, 0.0), "axis-canonical", False
        return shorter, "shorter-axis", False
    if equal:
        # point of the 45 degree ray on the curve (equals (A, A)/sqrt(2) only when eps = 1)
        return tuple(superellipse_point(A, B, eps, 0.25 * math.pi)), "diagonal", False
    sol = antipodal_eta_search(A, B, eps)
    if sol.residual > ANTIPODAL_THRESHOLD:
        return shorter, "shorter-axis-fallback", True
    return tuple(superellipse_point(A, B, eps, sol.eta)), "antipodal-search", False


def contact_points(sq: Superquadric, plane: str) -> ContactChoice:
    """Contact pair ``+/- p_a`` in the principal plane ``plane`` ("xy", "yz" or "xz")."""
    axes = {"xy": (0, 1), "yz": (1, 2), "xz": (0, 2)}[plane]
    a = sq.axes
    eps = sq.eps2 if plane == "xy" else sq.eps1
    (u, v), rule, penalty = _section_contact(a[axes[0]], a[axes[1]], eps)
    p = np.zeros(3)
    p[axes[0]], p[axes[1]] = u, v
    return ContactChoice(p, rule, penalty)


# ---------------------------------------------------------------------------
# Approach filtering and synthesis
# ---------------------------------------------------------------------------


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def _axis_angle(axis, angle):
    k = _unit(axis)
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + math.sin(angle) * K + (1.0 - math.cos(angle)) * (K @ K)


@dataclass(frozen=True, eq=False)
class Approach:
    """One approach direction with its contacts and feasibility verdict."""

    local: np.ndarray
    world: np.ndarray
    contact: ContactChoice
    tilt: float
    extent: float
    reason: str | None
    base_axis: int
    variant_angle: float = 0.0

    @property
    def accepted(self) -> bool:
        return self.reason is None


@dataclass(frozen=True, eq=False)
class GraspCandidate:
    approach: np.ndarray  # s_W
    approach_local: np.ndarray  # s_a
    contacts: np.ndarray  # (2, 3) world
    contacts_local: np.ndarray  # (2, 3)
    closing_axis: np.ndarray  # world unit vector
    frame: RigidPose
    status: str  # "accepted" | "discarded"
    reason: str | None
    rank: int | None
    closing_span: float
    tilt: float
    tier: int | None
    variant_angle: float
    rule: str
    penalty: bool

    def to_dict(self) -> dict:
        return {
            "approach": [float(v) for v in self.approach],
            "contacts": [[float(v) for v in c] for c in self.contacts],
            "frame": self.frame.to_dict(),
            "status": self.status,
            "reason": self.reason,
            "rank": self.rank,
            "closing_span_m": float(self.closing_span),
            "tilt_deg": math.degrees(self.tilt),
            "variant_deg": math.degrees(self.variant_angle),
            "contact_rule": self.rule,
        }


def _world_rotation(sq: Superquadric, T_WK):
    T = np.eye(4) if T_WK is None else check_rigid(T_WK)
    return T @ sq.pose.matrix


def _verdict(s_world, tilt, extent, span, gripper: GripperSpec):
    if s_world[2] < -1e-9:
        return "through-table"
    if tilt > gripper.alpha + 1e-12:
        return "verticality"
    if extent > gripper.depth:
        return "depth"
    if span > gripper.width:
        return "width"
    return None


def approach_directions(sq: Superquadric, gripper: GripperSpec, T_WK=None) -> list[Approach]:
    """Verdicts for the six principal approaches ``+/-x, +/-y, +/-z`` of the superquadric frame.

    ``T_WK`` maps the superquadric's parent frame into the world (identity when None).
    The depth test compares the semi-axis along the approach with the finger
    depth; the width test compares the contact span with the gripper opening.
    """
    R = _world_rotation(sq, T_WK)[:3, :3]
    out = []
    for k in (2, 0, 1):
        plane, _ = _SECTIONS[k]
        contact = contact_points(sq, plane)
        for sign in (1.0, -1.0):
            s_a = np.zeros(3)
            s_a[k] = sign
            s_w = R @ s_a
            tilt = math.acos(max(-1.0, min(1.0, float(s_w[2]))))
            extent = float(sq.axes[k])
            reason = _verdict(s_w, tilt, extent, contact.span, gripper)
            out.append(Approach(s_a, s_w, contact, tilt, extent, reason, k))
    return out


def _variants(sq, gripper, R, base: list[Approach], step):
    seen = [a.local for a in base]
    out = []
    n_steps = int(round(HALF_PI / step))
    for b in base:
        axis = b.contact.p_a
        if np.linalg.norm(axis) == 0.0:
            continue
        for j in range(1, n_steps):
            for sgn in (1, -1):
                ang = sgn * j * step
                if abs(abs(ang) - HALF_PI) < 1e-9:
                    continue
                s_a = _axis_angle(axis, ang) @ b.local
                if any(np.allclose(s_a, s, atol=1e-9) for s in seen):
                    continue
                s_w = R @ s_a
                tilt = math.acos(max(-1.0, min(1.0, float(s_w[2]))))
                if s_w[2] < -1e-9 or tilt > gripper.alpha + 1e-12:
                    continue  # variants are only sampled inside the verticality cone
                seen.append(s_a)
                extent = support(sq, s_a)
                reason = _verdict(s_w, tilt, extent, b.contact.span, gripper)
                out.append(Approach(s_a, s_w, b.contact, tilt, extent, reason, b.base_axis, ang))
    return out


def _candidate(sq, T_WS, a: Approach, rank, tier):
    R, t = T_WS[:3, :3], T_WS[:3, 3]
    p = a.contact.p_a
    local = np.array([p, -p])
    world = local @ R.T + t
    closing = _unit(R @ p) if np.linalg.norm(p) > 0 else np.array([1.0, 0.0, 0.0])
    z = -a.world
    y = np.cross(z, closing)
    frame_R = np.column_stack([closing, _unit(y), z])
    frame = RigidPose(tuple(world.mean(axis=0)), *rpy_from_rotation(frame_R))
    return GraspCandidate(
        approach=a.world,
        approach_local=a.local,
        contacts=world,
        contacts_local=local,
        closing_axis=closing,
        frame=frame,
        status="accepted" if a.accepted else "discarded",
        reason=a.reason,
        rank=rank,
        closing_span=a.contact.span,
        tilt=a.tilt,
        tier=tier,
        variant_angle=a.variant_angle,
        rule=a.contact.rule,
        penalty=a.contact.penalty,
    )


def _closing_key(p):
    u = _unit(p)
    k = int(np.argmax(np.abs(u)))
    return tuple(np.round(u if u[k] > 0 else -u, 9))


def synthesize(sq: Superquadric, gripper: GripperSpec, T_WK=None, rotation_step: float = ROTATION_STEP) -> list[GraspCandidate]:
    """Ranked grasp candidates; accepted ones first (rank 1 = best), then discarded ones.

    Accepted grasps are grouped by closing axis, groups ordered by contact span
    (the smallest semi-axis first). Inside a group the principal approaches
    come before their rotated variants, each ordered by tilt, then span.
    Axis-contact fallbacks after a failed antipodal search sort after all others.
    """
    T_WS = _world_rotation(sq, T_WK)
    base = approach_directions(sq, gripper, T_WK)
    variants = _variants(sq, gripper, T_WS[:3, :3], base, rotation_step)
    accepted = [a for a in base + variants if a.accepted]

    groups: dict = {}
    for a in accepted:
        groups.setdefault(_closing_key(a.contact.p_a), []).append(a)
    group_order = sorted(
        groups,
        key=lambda g: (
            groups[g][0].contact.penalty,
            round(groups[g][0].contact.span, 12),
            min(round(a.tilt, 12) for a in groups[g]),
            g,
        ),
    )
    ranked = []
    for gi, g in enumerate(group_order):
        members = sorted(
            groups[g],
            key=lambda a: (a.variant_angle != 0.0, round(a.tilt, 12), round(a.contact.span, 12), abs(a.variant_angle), -a.variant_angle),
        )
        for a in members:
            tier = 2 * gi + (1 if a.variant_angle == 0.0 else 2)
            ranked.append(_candidate(sq, T_WS, a, len(ranked) + 1, tier))
    discarded = [_candidate(sq, T_WS, a, None, None) for a in base + variants if not a.accepted]
    return ranked + discarded


def grasps_to_json(cands: list[GraspCandidate]) -> list[dict]:
    return [c.to_dict() for c in cands]

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from oracles import box_surface_area, curve, fd_curvature, fd_tangent, implicit_scalar, rot_xyz
from sqgrasp.errors import DomainError, ParameterError, SingularityError
from sqgrasp.sq_core import (
    HALF_PI,
    RigidPose,
    Superquadric,
    curvature_at,
    implicit_value,
    normal_at,
    parametric_point,
    rotation_from_rpy,
    rpy_from_rotation,
    sample_surface,
    sample_surface_arrays,
    spow,
    superellipse_params,
    support,
)

axis_len = st.floats(0.02, 0.5)
expo = st.floats(0.1, 1.9)
eta_st = st.floats(-HALF_PI, HALF_PI)
omega_st = st.floats(-math.pi, math.pi)


def unit_sphere():
    return Superquadric(1, 1, 1, 1, 1)


class TestImplicitValue:
    def test_surface_point_of_unit_sphere(self):
        assert implicit_value(unit_sphere(), [1, 0, 0]) == pytest.approx(1.0)

    def test_center(self):
        assert implicit_value(unit_sphere(), [0, 0, 0]) == 0.0

    def test_scalar_evaluation(self):
        sq = Superquadric(1, 2, 3, 0.5, 1.0)
        assert implicit_value(sq, [0.5, 1.0, 1.5]) == pytest.approx(0.3125, abs=1e-12)

    def test_vectorised_matches_scalar_oracle(self, rng):
        sq = Superquadric(0.1, 0.2, 0.3, 0.4, 1.6)
        pts = rng.uniform(-0.4, 0.4, (50, 3))
        expected = [implicit_scalar(sq.axes, sq.eps1, sq.eps2, p) for p in pts]
        assert_allclose(implicit_value(sq, pts), expected, rtol=1e-12)

    def test_inside_and_outside(self):
        sq = Superquadric(1, 1, 1, 0.5, 0.5)
        assert implicit_value(sq, [0.5, 0.5, 0.5]) < 1.0
        assert implicit_value(sq, [1.5, 0.0, 0.0]) > 1.0

    @pytest.mark.parametrize("bad", [[math.nan, 0, 0], [0, math.inf, 0]])
    def test_non_finite_rejected(self, bad):
        with pytest.raises(DomainError):
            implicit_value(unit_sphere(), bad)


class TestParametricPoint:
    def test_axis_intercept(self):
        sq = Superquadric(0.3, 0.2, 0.1, 0.7, 1.3)
        assert_allclose(parametric_point(sq, 0.0, 0.0), [0.3, 0, 0], atol=1e-15)

    @pytest.mark.parametrize("omega", [-3.0, 0.0, 1.1, math.pi])
    def test_pole(self, omega):
        sq = Superquadric(0.3, 0.2, 0.1, 0.7, 1.3)
        assert_allclose(parametric_point(sq, HALF_PI, omega), [0, 0, 0.1], atol=1e-15)

    def test_hand_evaluation(self):
        sq = Superquadric(2, 2, 1, 1, 1)
        assert_allclose(parametric_point(sq, math.pi / 4, 0.0), [math.sqrt(2), 0, 1 / math.sqrt(2)], atol=1e-12)

    @given(axis_len, axis_len, axis_len, expo, expo, eta_st, omega_st)
    def test_on_surface_closure(self, a1, a2, a3, e1, e2, eta, omega):
        sq = Superquadric(a1, a2, a3, e1, e2)
        p = parametric_point(sq, eta, omega)
        assert implicit_value(sq, p) == pytest.approx(1.0, abs=1e-9)

    @given(axis_len, axis_len, axis_len, expo, expo, eta_st, omega_st)
    def test_octant_symmetry(self, a1, a2, a3, e1, e2, eta, omega):
        sq = Superquadric(a1, a2, a3, e1, e2)
        p = parametric_point(sq, eta, omega)
        for flip in ([-1, 1, 1], [1, -1, 1], [1, 1, -1], [-1, -1, -1]):
            assert implicit_value(sq, p * np.array(flip)) == pytest.approx(1.0, abs=1e-9)

    def test_signed_power(self):
        assert_allclose(spow([-8.0, 0.0, 8.0], 1 / 3), [-2.0, 0.0, 2.0])


class TestSampling:
    def test_unit_sphere_chords(self):
        d = 0.1
        eta, omega, pts = sample_surface_arrays(unit_sphere(), d)
        for e in np.unique(eta):
            ring = pts[eta == e]
            if len(ring) < 3:
                continue
            chords = np.linalg.norm(np.diff(np.vstack([ring, ring[:1]]), axis=0), axis=1)
            assert chords.min() >= 0.5 * d and chords.max() <= 2 * d

    def test_on_surface(self):
        sq = Superquadric(0.5, 0.5, 0.9, 1.5, 1.0)
        pts = np.array([s.point for s in sample_surface(sq, 0.02)])
        assert_allclose(implicit_value(sq, pts), 1.0, atol=1e-9)

    def test_box_point_count_against_area(self):
        sq = Superquadric(1, 1, 1, 0.1, 0.1)
        d = 0.05
        n = len(sample_surface_arrays(sq, d)[0])
        expected = box_surface_area(sq.axes, 0.1, 0.1) / d**2
        assert abs(n - expected) <= 0.2 * expected

    def test_area_oracle_on_sphere(self):
        assert box_surface_area((1, 1, 1), 1.0, 1.0) == pytest.approx(4 * math.pi, rel=1e-3)

    @pytest.mark.parametrize(
        "A,B,eps,d",
        [(1, 1, 1, 0.1), (0.05, 0.03, 0.3, 0.002), (0.1, 0.2, 1.8, 0.005), (0.5, 0.9, 1.5, 0.02), (1, 1, 0.1, 0.05)],
    )
    def test_profile_chords_within_contract(self, A, B, eps, d):
        ts = superellipse_params(A, B, eps, d)
        pts = np.array([curve(A, B, eps, t) for t in ts])
        chords = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        assert ts[0] == 0.0 and ts[-1] == HALF_PI
        assert chords.min() >= 0.5 * d and chords.max() <= 2 * d

    @settings(max_examples=30)
    @given(st.floats(0.05, 0.5), st.floats(0.05, 0.5), st.floats(0.05, 0.5), expo, expo, st.floats(0.1, 0.5))
    def test_sampled_chords_property(self, a1, a2, a3, e1, e2, frac):
        sq = Superquadric(a1, a2, a3, e1, e2)
        d = frac * min(a1, a2, a3)
        eta, omega, pts = sample_surface_arrays(sq, d)
        # latitude sweep runs along the meridian of the longer horizontal axis
        k = 0 if a1 >= a2 else 1
        keep = (omega == (0.0 if k == 0 else HALF_PI)) & (eta >= 0)
        merid = pts[keep]
        merid = merid[np.lexsort((merid[:, 2], -merid[:, k]))]
        chords = np.linalg.norm(np.diff(merid, axis=0), axis=1)
        assert chords.min() >= 0.5 * d - 1e-12 and chords.max() <= 2 * d + 1e-12
        for e in np.unique(eta):
            ring = pts[eta == e]
            if len(ring) < 8:
                continue
            chords = np.linalg.norm(np.diff(np.vstack([ring, ring[:1]]), axis=0), axis=1)
            assert chords.min() >= 0.5 * d - 1e-12 and chords.max() <= 2 * d + 1e-12

    def test_sharp_box_has_no_gap_at_edges(self):
        # first parameter steps here are far below the float spacing near pi/2
        sq = Superquadric(0.2, 0.15, 0.2, 0.1, 0.1)
        d = 0.005
        eta, omega, pts = sample_surface_arrays(sq, d)
        merid = pts[(omega == 0.0) & (eta >= 0)]
        chords = np.linalg.norm(np.diff(merid[np.lexsort((merid[:, 2], -merid[:, 0]))], axis=0), axis=1)
        assert chords.max() <= 2 * d and chords.min() >= 0.5 * d
        assert_allclose(implicit_value(sq, pts), 1.0, atol=1e-9)

    @given(axis_len, axis_len, axis_len, expo, expo)
    def test_bounding_box(self, a1, a2, a3, e1, e2):
        sq = Superquadric(a1, a2, a3, e1, e2)
        pts = sample_surface_arrays(sq, 0.3 * min(a1, a2, a3))[2]
        assert np.all(np.abs(pts) <= sq.axes + 1e-12)

    @pytest.mark.parametrize("d", [0.0, -0.1, 0.3, math.nan])
    def test_bad_spacing(self, d):
        with pytest.raises(ParameterError):
            sample_surface(Superquadric(0.3, 0.4, 0.5, 1, 1), d)


ETAS = np.linspace(0.05, HALF_PI - 0.05, 25)


class TestCurvature:
    def test_circle(self):
        r = 0.25
        sq = Superquadric(r, r, r, 1.0, 1.0)
        for eta in ETAS:
            assert curvature_at(sq, eta) == pytest.approx(1 / r, rel=1e-12)

    def test_circle_includes_ends(self):
        sq = Superquadric(0.5, 0.5, 0.5, 1.0, 1.0)
        assert curvature_at(sq, 0.0) == pytest.approx(2.0)
        assert curvature_at(sq, HALF_PI) == pytest.approx(2.0)

    def test_ellipse_limit_at_axis(self):
        sq = Superquadric(2, 1, 1, 1.0, 1.0)
        assert curvature_at(sq, 1e-6) == pytest.approx(2.0, rel=1e-6)
        assert fd_curvature(2, 1, 1.0, 1e-3) == pytest.approx(2.0, rel=1e-5)

    def test_ellipse_closed_form(self):
        a, b = 2.0, 1.0
        for t in ETAS:
            closed = a * b / (a * a * math.sin(t) ** 2 + b * b * math.cos(t) ** 2) ** 1.5
            assert curvature_at(Superquadric(a, 1, b, 1.0, 1.0), t) == pytest.approx(closed, rel=1e-12)

    def test_minimum_migrates_to_diagonal(self):
        sq = Superquadric(1, 1, 1, 1.5, 1.0)
        assert curvature_at(sq, math.pi / 4) < curvature_at(sq, 1e-3)

    @pytest.mark.parametrize("e1", [0.3, 0.7, 1.0, 1.3, 1.7])
    @pytest.mark.parametrize("plane", ["xz", "yz", "xy"])
    def test_matches_finite_differences(self, e1, plane):
        sq = Superquadric(0.05, 0.08, 0.12, e1, e1)
        A, B = {"xz": (0.05, 0.12), "yz": (0.08, 0.12), "xy": (0.05, 0.08)}[plane]
        for t in ETAS:
            assert curvature_at(sq, t, plane) == pytest.approx(fd_curvature(A, B, e1, t), rel=1e-4)

    @pytest.mark.parametrize("t", [0.0, HALF_PI])
    def test_cusp_is_singular(self, t):
        with pytest.raises(SingularityError):
            curvature_at(Superquadric(1, 1, 1, 0.5, 1.0), t)

    def test_outside_quarter_rejected(self):
        with pytest.raises(ParameterError):
            curvature_at(unit_sphere(), 2.0)


class TestNormal:
    def test_circle_radial(self):
        sq = Superquadric(0.3, 0.3, 0.3, 1.0, 1.0)
        for t in ETAS:
            assert_allclose(normal_at(sq, t), [math.cos(t), math.sin(t)], atol=1e-12)

    def test_axis_aligned_at_intercepts(self):
        sq = Superquadric(0.5, 0.5, 0.9, 1.5, 1.0)
        assert_allclose(normal_at(sq, 0.0), [1, 0], atol=1e-12)
        assert_allclose(normal_at(sq, HALF_PI), [0, 1], atol=1e-12)

    @given(axis_len, axis_len, st.floats(0.2, 1.9), st.floats(0.02, HALF_PI - 0.02))
    def test_orthogonal_to_fd_tangent(self, A, B, eps, t):
        sq = Superquadric(A, 1.0, B, eps, 1.0)
        n = normal_at(sq, t)
        assert abs(n @ fd_tangent(A, B, eps, t)) <= 1e-6
        assert np.linalg.norm(n) == pytest.approx(1.0)

    def test_outward(self):
        sq = Superquadric(0.2, 0.2, 0.1, 0.6, 1.0)
        for t in ETAS:
            assert normal_at(sq, t) @ curve(0.2, 0.1, 0.6, t) > 0


class TestSupport:
    def test_axes(self):
        sq = Superquadric(0.1, 0.2, 0.3, 0.5, 1.5)
        for k in range(3):
            e = np.zeros(3)
            e[k] = 1.0
            assert support(sq, e) == pytest.approx(sq.axes[k], rel=1e-9)

    def test_against_dense_samples(self, rng):
        sq = Superquadric(0.1, 0.2, 0.3, 0.5, 1.5)
        pts = sample_surface_arrays(sq, 0.004)[2]
        for _ in range(10):
            u = rng.normal(size=3)
            u /= np.linalg.norm(u)
            assert support(sq, u) == pytest.approx(np.max(pts @ u), rel=2e-3)


class TestPose:
    @given(st.floats(-3, 3), st.floats(-1.5, 1.5), st.floats(-3, 3))
    def test_rpy_matches_oracle(self, r, p, y):
        assert_allclose(rotation_from_rpy(r, p, y), rot_xyz(r, p, y), atol=1e-12)
        assert_allclose(rotation_from_rpy(*rpy_from_rotation(rot_xyz(r, p, y))), rot_xyz(r, p, y), atol=1e-9)

    def test_world_local_round_trip(self, rng):
        sq = Superquadric(0.1, 0.1, 0.1, 1, 1, RigidPose((1, 2, 3), 0.3, -0.2, 1.0))
        p = rng.normal(size=(20, 3))
        assert_allclose(sq.to_world(sq.to_local(p)), p, atol=1e-12)

    def test_json_round_trip(self):
        sq = Superquadric(0.1, 0.2, 0.3, 0.4, 0.5, RigidPose((1, 2, 3), 0.1, 0.2, 0.3))
        assert Superquadric.from_dict(sq.to_dict()) == sq

    @pytest.mark.parametrize("bad", [0.0, -1.0, math.nan])
    def test_invalid_axis(self, bad):
        with pytest.raises(ParameterError):
            Superquadric(bad, 1, 1, 1, 1)

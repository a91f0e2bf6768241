import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from oracles import implicit_scalar
from scenes import upright
from sqgrasp.cloud import PointCloud
from sqgrasp.errors import ParameterError
from sqgrasp.fit import A_MIN, FitOptions, fit_lm, initialize, radial_error, residual
from sqgrasp.sq_core import RigidPose, Superquadric, parametric_point, sample_points


def full_view(sq, d=0.004, sigma=0.0, seed=0):
    pts = sample_points(sq, d, world=True)
    pts = pts + np.random.default_rng(seed).normal(0.0, sigma, pts.shape)
    return PointCloud(pts, "world")


def scaled(sq, s):
    return Superquadric(sq.a1 * s, sq.a2 * s, sq.a3 * s, sq.eps1, sq.eps2, pose=sq.pose)


def oracle_residual(a, e1, e2, p):
    return math.sqrt(a[0] * a[1] * a[2]) * (implicit_scalar(a, e1, e2, p) ** e1 - 1.0)


class TestResidual:
    @pytest.mark.parametrize("shape", [(0.05, 0.08, 0.1, 0.3, 1.2), (1, 1, 1, 1, 1), (0.2, 0.1, 0.05, 1.8, 0.1)])
    def test_zero_on_surface(self, shape):
        sq = Superquadric(*shape)
        for eta, om in [(0.3, 0.4), (-1.0, 2.5), (1.2, -2.9)]:
            assert abs(residual(sq, parametric_point(sq, eta, om))) <= 1e-9

    def test_unit_sphere_hand_value(self):
        assert residual(Superquadric(1, 1, 1, 1, 1), [2.0, 0.0, 0.0]) == pytest.approx(3.0, abs=1e-12)

    @settings(max_examples=40)
    @given(
        st.tuples(st.floats(0.02, 0.5), st.floats(0.02, 0.5), st.floats(0.02, 0.5)),
        st.floats(0.1, 1.9),
        st.floats(0.1, 1.9),
        st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)).filter(lambda p: np.linalg.norm(p) > 0.05),
        st.floats(0.2, 5.0),
    )
    def test_joint_scaling(self, a, e1, e2, p, s):
        sq = Superquadric(*a, e1, e2)
        r = residual(sq, p)
        rs = residual(Superquadric(*(s * np.array(a)), e1, e2), s * np.array(p))
        assert rs == pytest.approx(s**1.5 * r, rel=1e-9, abs=1e-12)

    def test_matches_scalar_oracle(self, rng):
        for _ in range(50):
            a = rng.uniform(0.02, 0.3, 3)
            e1, e2 = rng.uniform(0.1, 1.9, 2)
            p = rng.uniform(-0.4, 0.4, 3)
            sq = Superquadric(*a, e1, e2)
            assert residual(sq, p) == pytest.approx(oracle_residual(a, e1, e2, p), rel=1e-9, abs=1e-12)

    def test_vectorised_shape(self, rng):
        sq = Superquadric(0.1, 0.2, 0.3, 0.5, 0.5)
        assert residual(sq, rng.normal(size=(4, 5, 3))).shape == (4, 5)

    def test_op_weight(self):
        sq = Superquadric(1, 1, 1, 1, 1)
        assert residual(sq, [2.0, 0.0, 0.0], op_weight=True) == pytest.approx(6.0)


class TestInitialize:
    def test_unit_sphere(self):
        x = initialize(sample_points(Superquadric(1, 1, 1, 1, 1), 0.05))
        assert_allclose(x[:3], 1.0, rtol=0.2)

    def test_exponents_fixed(self, rng):
        for _ in range(5):
            x = initialize(rng.normal(size=(200, 3)) * rng.uniform(0.01, 0.2, 3))
            assert x[3] == 1.0 and x[4] == 1.0

    def test_coin_floor(self, rng):
        coin = np.column_stack([rng.uniform(-0.05, 0.05, (500, 2)), np.zeros(500)])
        x = initialize(coin)
        assert np.all(np.isfinite(x))
        assert x[2] == A_MIN

    def test_axis_assignment(self, rng):
        pts = sample_points(Superquadric(0.05, 0.1, 0.2, 1, 1), 0.005)
        x = initialize(pts)
        assert x[0] < x[1] < x[2]


class TestFit:
    def test_recovers_spec_shape(self):
        truth = Superquadric(0.05, 0.05, 0.15, 0.3, 1.0, pose=RigidPose((0.3, 0.1, 0.2), 0.1, -0.2, 0.7))
        fit = fit_lm(full_view(truth), truth.pose)
        assert fit.converged
        assert_allclose(fit.sq.shape, truth.shape, rtol=0.02)

    def test_cheese_box_class(self):
        truth = upright(0.06, 0.06, 0.025, 0.1557, 0.319)
        fit = fit_lm(full_view(truth, 0.003, sigma=0.0005), truth.pose)
        assert fit.sq.eps1 < 0.3
        assert radial_error(truth, fit.sq) < 5.0

    def test_toy_cylinder_class(self):
        truth = upright(0.023, 0.024, 0.15, 0.389, 1.031)
        fit = fit_lm(full_view(truth, 0.003, sigma=0.0005), truth.pose)
        assert fit.sq.eps1 < 0.6
        assert fit.sq.eps2 == pytest.approx(1.0, abs=0.15)

    def test_history_and_bounds(self, rng):
        opts = FitOptions()
        for k in range(4):
            truth = upright(*rng.uniform(0.02, 0.1, 3), *rng.uniform(0.2, 1.8, 2))
            fit = fit_lm(full_view(truth, 0.006, sigma=0.002, seed=k), truth.pose)
            hist = np.array(fit.cost_history)
            assert np.all(np.diff(hist) <= 0.0)
            traj = np.array(fit.trajectory)
            assert np.all(traj >= np.array(opts.lower)) and np.all(traj <= np.array(opts.upper))
            assert fit.iterations <= opts.max_iter

    def test_bounds_hold_when_truth_outside(self):
        truth = upright(0.05, 0.05, 0.05, 0.05, 0.05, yaw=0.0)
        fit = fit_lm(full_view(truth, 0.004), truth.pose)
        assert fit.sq.eps1 >= 0.1 and fit.sq.eps2 >= 0.1

    def test_jacobian_sanity(self, rng):
        # forward difference, as the optimiser uses, against a central difference of the scalar oracle
        for _ in range(20):
            x = np.concatenate([rng.uniform(0.03, 0.3, 3), rng.uniform(0.2, 1.8, 2)])
            p = rng.uniform(-0.3, 0.3, 3)
            j = int(rng.integers(5))
            h = 1e-6 * abs(x[j])
            xp = x.copy()
            xp[j] += h
            fwd = (residual(Superquadric(*xp), p) - residual(Superquadric(*x), p)) / h
            hc = 1e-7 * abs(x[j])
            xa, xb = x.copy(), x.copy()
            xa[j] += hc
            xb[j] -= hc
            cen = (oracle_residual(xa[:3], xa[3], xa[4], p) - oracle_residual(xb[:3], xb[3], xb[4], p)) / (2 * hc)
            assert fwd == pytest.approx(cen, rel=1e-3, abs=1e-9)

    def test_permutation_invariance(self, rng):
        truth = upright(0.04, 0.06, 0.05, 0.4, 0.8, yaw=0.2)
        cloud = full_view(truth, 0.005, sigma=0.001)
        a = fit_lm(cloud, truth.pose)
        b = fit_lm(PointCloud(cloud.points[rng.permutation(len(cloud))]), truth.pose)
        assert abs(a.cost - b.cost) < 1e-10

    def test_deterministic(self):
        truth = upright(0.04, 0.06, 0.05, 0.4, 0.8, yaw=0.2)
        cloud = full_view(truth, 0.005, sigma=0.001)
        a, b = fit_lm(cloud, truth.pose), fit_lm(cloud, truth.pose)
        assert_array_equal(np.array(a.trajectory), np.array(b.trajectory))

    def test_not_converged_is_not_an_error(self):
        truth = upright(0.04, 0.06, 0.05, 0.4, 0.8)
        fit = fit_lm(full_view(truth, 0.005, sigma=0.002), truth.pose, FitOptions(max_iter=1))
        assert fit.iterations == 1
        assert not fit.converged

    def test_too_few_points(self):
        with pytest.raises(ParameterError):
            fit_lm(PointCloud(np.zeros((5, 3))), np.eye(4))

    def test_json_fields(self):
        truth = upright(0.04, 0.04, 0.04, 1, 1)
        d = fit_lm(full_view(truth, 0.008), truth.pose).to_dict()
        assert set(d) == {"a1", "a2", "a3", "eps1", "eps2", "pose", "cost", "iterations", "time_s", "converged"}
        assert set(d["pose"]) == {"x", "y", "z", "roll", "pitch", "yaw"}


class TestRadialError:
    def test_identical(self):
        sq = Superquadric(0.05, 0.07, 0.1, 0.5, 1.2)
        assert radial_error(sq, sq) == pytest.approx(0.0, abs=1e-9)

    @pytest.mark.parametrize("shape", [(0.05, 0.07, 0.1, 0.5, 1.2), (0.1, 0.1, 0.1, 1, 1), (0.03, 0.08, 0.02, 0.1, 0.3)])
    def test_scaled_ten_percent(self, shape):
        sq = Superquadric(*shape)
        assert radial_error(sq, scaled(sq, 1.1)) == pytest.approx(10.0, abs=0.5)

    def test_symmetric(self):
        a = Superquadric(0.05, 0.07, 0.1, 0.5, 1.2)
        b = Superquadric(0.06, 0.06, 0.09, 0.8, 0.9)
        assert radial_error(a, b, 0.005) == pytest.approx(radial_error(b, a, 0.005), rel=1e-12)

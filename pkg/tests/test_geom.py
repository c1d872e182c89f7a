import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geolidar.geom import (
    Pose,
    Twist,
    compose,
    extrapolate_pose,
    inverse,
    quat_from_axis_angle,
    quat_to_matrix,
    matrix_to_quat,
    se3_exp,
    se3_log,
    slerp,
    transform_points,
)

from conftest import assert_pose_close, random_pose, rotation_angle_between


def axis_angle_quat(axis, angle):
    # independent of quat_from_axis_angle: hand-rolled reference
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return np.array(
        [
            axis[0] * math.sin(angle / 2),
            axis[1] * math.sin(angle / 2),
            axis[2] * math.sin(angle / 2),
            math.cos(angle / 2),
        ]
    )


class TestCompose:
    def test_identity(self, rng):
        p = random_pose(rng, t_scale=5.0)
        assert_pose_close(compose(Pose.identity(), p), p)
        assert_pose_close(compose(p, Pose.identity()), p)

    def test_inverse_roundtrip(self, rng):
        p = random_pose(rng, t_scale=5.0)
        assert_pose_close(compose(p, inverse(p)), Pose.identity())

    def test_pure_translations_commute(self):
        a = Pose([1, 0, 0], [0, 0, 0, 1])
        b = Pose([0, 2, 0], [0, 0, 0, 1])
        np.testing.assert_allclose(compose(a, b).t, [1, 2, 0])
        np.testing.assert_allclose(compose(b, a).t, [1, 2, 0])

    def test_associativity(self, rng):
        a, b, c = (random_pose(rng, t_scale=3.0) for _ in range(3))
        assert_pose_close(compose(compose(a, b), c), compose(a, compose(b, c)), 1e-9, 1e-9)

    def test_matches_matrix_product(self, rng):
        a, b = random_pose(rng), random_pose(rng)
        np.testing.assert_allclose(compose(a, b).matrix(), a.matrix() @ b.matrix(), atol=1e-12)


class TestInverse:
    def test_identity(self):
        assert_pose_close(inverse(Pose.identity()), Pose.identity())

    def test_pure_translation(self):
        p = inverse(Pose([1, 2, 3], [0, 0, 0, 1]))
        np.testing.assert_allclose(p.t, [-1, -2, -3])

    def test_double_inverse(self, rng):
        p = random_pose(rng, t_scale=4.0)
        assert_pose_close(inverse(inverse(p)), p)


class TestTransformPoints:
    def test_roundtrip(self, rng):
        p = random_pose(rng, t_scale=4.0)
        x = rng.normal(size=3)
        np.testing.assert_allclose(
            transform_points(p, transform_points(inverse(p), x)), x, atol=1e-9
        )

    def test_batch_matches_single(self, rng):
        p = random_pose(rng)
        pts = rng.normal(size=(7, 3))
        batch = transform_points(p, pts)
        for i in range(7):
            np.testing.assert_allclose(batch[i], transform_points(p, pts[i]), atol=1e-12)


class TestQuaternions:
    def test_matrix_roundtrip(self, rng):
        for _ in range(20):
            q = random_pose(rng).q
            q2 = matrix_to_quat(quat_to_matrix(q))
            assert rotation_angle_between(q, q2) < 1e-9


class TestSe3ExpLog:
    def test_zero_twist(self):
        assert_pose_close(se3_exp(Twist(np.zeros(3), np.zeros(3))), Pose.identity())

    def test_pure_translation(self):
        p = se3_exp(Twist([1, 2, 3], [0, 0, 0]))
        np.testing.assert_allclose(p.t, [1, 2, 3])
        np.testing.assert_allclose(p.q, [0, 0, 0, 1])

    def test_log_domain_error_at_pi(self):
        p = Pose([0, 0, 0], quat_from_axis_angle([1, 0, 0], math.pi))
        with pytest.raises(ValueError):
            se3_log(p)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=60, deadline=None)
    def test_log_exp_roundtrip(self, seed):
        rng = np.random.default_rng(seed)
        rho = rng.uniform(-5, 5, 3)
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        theta = axis * rng.uniform(0, 2.9)
        v = Twist(rho, theta)
        back = se3_log(se3_exp(v))
        np.testing.assert_allclose(back.as_vector(), v.as_vector(), atol=1e-9)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=60, deadline=None)
    def test_exp_log_roundtrip(self, seed):
        rng = np.random.default_rng(seed)
        p = random_pose(rng, t_scale=5.0, angle_max=math.pi - 1e-3)
        assert_pose_close(se3_exp(se3_log(p)), p, 1e-9, 1e-9)

    def test_small_angle_branch(self):
        v = Twist([0.3, -0.2, 0.1], [1e-7, -2e-7, 1e-7])
        back = se3_log(se3_exp(v))
        np.testing.assert_allclose(back.as_vector(), v.as_vector(), atol=1e-12)


class TestSlerp:
    def test_endpoints(self, rng):
        q0 = random_pose(rng).q
        q1 = random_pose(rng).q
        assert rotation_angle_between(slerp(q0, q1, 0.0), q0) < 1e-9
        assert rotation_angle_between(slerp(q0, q1, 1.0), q1) < 1e-9

    def test_static_extrapolation(self, rng):
        q = random_pose(rng).q
        np.testing.assert_allclose(slerp(q, q, 2.0), q)

    def test_doubling_oracle(self):
        # axis-angle doubling: 45 deg about z extrapolated with s=2 is 90 deg
        q0 = np.array([0.0, 0.0, 0.0, 1.0])
        q1 = axis_angle_quat([0, 0, 1], math.pi / 4)
        expected = axis_angle_quat([0, 0, 1], math.pi / 2)
        assert rotation_angle_between(slerp(q0, q1, 2.0), expected) < 1e-9

    def test_interpolation_midpoint(self):
        q0 = axis_angle_quat([1, 0, 0], 0.2)
        q1 = axis_angle_quat([1, 0, 0], 0.6)
        expected = axis_angle_quat([1, 0, 0], 0.4)
        assert rotation_angle_between(slerp(q0, q1, 0.5), expected) < 1e-9

    def test_shortest_path_sign_convention(self):
        q0 = axis_angle_quat([0, 0, 1], 0.1)
        q1 = -axis_angle_quat([0, 0, 1], 0.2)  # same rotation, flipped sign
        out = slerp(q0, q1, 2.0)
        expected = axis_angle_quat([0, 0, 1], 0.3)
        assert rotation_angle_between(out, expected) < 1e-9

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=40, deadline=None)
    def test_extrapolation_relative_rotation_identity(self, seed):
        # relative rotation from q1 to slerp(q0, q1, 2) equals the one from q0 to q1
        rng = np.random.default_rng(seed)
        q0 = random_pose(rng).q
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        from geolidar.geom import quat_mul

        q1 = quat_mul(q0, quat_from_axis_angle(axis, rng.uniform(-1.5, 1.5)))
        q2 = slerp(q0, q1, 2.0)
        step01 = rotation_angle_between(q0, q1)
        step12 = rotation_angle_between(q1, q2)
        assert abs(step01 - step12) < 1e-9


class TestExtrapolatePose:
    def test_static(self, rng):
        p = random_pose(rng, t_scale=3.0)
        assert_pose_close(extrapolate_pose(p, p), p)

    def test_translation_doubling(self):
        prev = Pose.identity()
        curr = Pose([1, 0, 0], [0, 0, 0, 1])
        np.testing.assert_allclose(extrapolate_pose(prev, curr).t, [2, 0, 0])

    def test_rotation_doubling_oracle(self):
        prev = Pose.identity()
        curr = Pose([0, 0, 0], axis_angle_quat([0, 0, 1], math.radians(10)))
        out = extrapolate_pose(prev, curr)
        expected = axis_angle_quat([0, 0, 1], math.radians(20))
        assert rotation_angle_between(out.q, expected) < 1e-9

    def test_combined_motion(self, rng):
        prev = random_pose(rng, t_scale=2.0)
        curr = random_pose(rng, t_scale=2.0)
        out = extrapolate_pose(prev, curr)
        np.testing.assert_allclose(out.t, 2 * curr.t - prev.t, atol=1e-12)


class TestPoseInvariants:
    def test_unit_norm_after_compose_chain(self, rng):
        p = Pose.identity()
        for _ in range(60):
            p = compose(p, random_pose(rng, t_scale=0.5))
            assert abs(np.linalg.norm(p.q) - 1.0) < 1e-9

    def test_canonical_hemisphere(self, rng):
        for _ in range(20):
            p = random_pose(rng)
            assert p.q[3] >= 0.0

    def test_immutable_arrays(self):
        p = Pose([1, 2, 3], [0, 0, 0, 1])
        with pytest.raises(ValueError):
            p.t[0] = 5.0

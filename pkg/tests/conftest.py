import math

import numpy as np
import pytest

from geolidar.geom import Pose, quat_angle, quat_conjugate, quat_from_axis_angle, quat_mul


def random_pose(rng, t_scale=1.0, angle_max=math.pi * 0.9) -> Pose:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(-angle_max, angle_max)
    return Pose(rng.uniform(-t_scale, t_scale, 3), quat_from_axis_angle(axis, angle))


def rotation_angle_between(qa, qb) -> float:
    """Geodesic angle between two unit quaternions, radians."""
    return quat_angle(quat_mul(quat_conjugate(np.asarray(qa)), np.asarray(qb)))


def assert_pose_close(a: Pose, b: Pose, tol_t=1e-9, tol_rad=1e-9):
    assert np.linalg.norm(a.t - b.t) <= tol_t, f"translation differs: {a.t} vs {b.t}"
    assert rotation_angle_between(a.q, b.q) <= tol_rad, f"rotation differs: {a.q} vs {b.q}"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

import numpy as np
import pytest

from graspforge import geometry


def test_quat_rotate_matches_matrix(rng):
    for _ in range(50):
        q = geometry.quat_normalize(rng.standard_normal(4))
        v = rng.standard_normal((5, 3))
        np.testing.assert_allclose(geometry.quat_rotate(q, v), v @ geometry.mat_from_quat(q).T,
                                   atol=1e-12)


def test_quat_mat_round_trip(rng):
    for _ in range(50):
        q = geometry.quat_normalize(rng.standard_normal(4))
        q2 = geometry.quat_from_mat(geometry.mat_from_quat(q))
        np.testing.assert_allclose(q, q2, atol=1e-9)


def test_rotvec_round_trip(rng):
    for _ in range(50):
        direction = geometry.unit(rng.standard_normal(3))
        r = direction * rng.uniform(0.0, np.pi - 1e-6)
        q = geometry.quat_from_rotvec(r)
        np.testing.assert_allclose(geometry.rotvec_from_quat(q), r, atol=1e-9)


def test_rotvec_beyond_pi_recovers_equivalent_rotation(rng):
    r = geometry.unit(rng.standard_normal(3)) * 4.0
    q = geometry.quat_from_rotvec(r)
    back = geometry.quat_from_rotvec(geometry.rotvec_from_quat(q))
    assert geometry.quat_angle(q, back) < 1e-9


def test_rotvec_tiny_angle_stable():
    r = np.array([1e-13, -2e-13, 0.5e-13])
    q = geometry.quat_from_rotvec(r)
    assert np.isfinite(q).all()
    np.testing.assert_allclose(geometry.rotvec_from_quat(q), r, atol=1e-15)


def test_rotation_between_maps_a_to_b(rng):
    for _ in range(50):
        a = geometry.unit(rng.standard_normal(3))
        b = geometry.unit(rng.standard_normal(3))
        np.testing.assert_allclose(geometry.rotation_between(a, b) @ a, b, atol=1e-9)


def test_rotation_between_handles_antipodal():
    a = np.array([0.0, 0.0, 1.0])
    np.testing.assert_allclose(geometry.rotation_between(a, -a) @ a, -a, atol=1e-9)


def test_euler_xyz_round_trip(rng):
    for _ in range(100):
        angles = rng.uniform([-np.pi, -np.pi / 2 + 0.01, -np.pi], [np.pi, np.pi / 2 - 0.01, np.pi])
        m = geometry.mat_from_euler_xyz(*angles)
        back = geometry.euler_xyz_from_mat(m)
        np.testing.assert_allclose(back, angles, atol=1e-9)


def test_slerp_endpoints(rng):
    a = geometry.quat_normalize(rng.standard_normal(4))
    b = geometry.quat_normalize(rng.standard_normal(4))
    np.testing.assert_allclose(geometry.quat_slerp(a, b, 0.0), a, atol=1e-12)
    assert geometry.quat_angle(geometry.quat_slerp(a, b, 1.0), b) < 1e-9


def test_pose_compose_inverse(rng):
    p = geometry.Pose(rng.standard_normal(3), geometry.quat_normalize(rng.standard_normal(4)))
    q = geometry.Pose(rng.standard_normal(3), geometry.quat_normalize(rng.standard_normal(4)))
    pts = rng.standard_normal((4, 3))
    np.testing.assert_allclose(p.compose(q).transform(pts), p.transform(q.transform(pts)), atol=1e-12)
    np.testing.assert_allclose(p.inverse().transform(p.transform(pts)), pts, atol=1e-12)


def test_unit_rejects_zero():
    with pytest.raises(ValueError):
        geometry.unit(np.zeros(3))

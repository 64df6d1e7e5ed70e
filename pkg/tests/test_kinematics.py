import numpy as np
import pytest

from mmtrack import kinematics as kin
from mmtrack.model import builtin_panda_on_base, builtin_planar_2link


def fd_jacobian(model, q, eps=1e-6):
    """Central finite differences of the pose map (the Jacobian oracle)."""
    J = np.zeros((6, model.total_dof))
    for k in range(model.total_dof):
        qp, qm = q.copy(), q.copy()
        qp[k] += eps
        qm[k] -= eps
        d = kin.forward_kinematics(model, qp).as_vector() \
            - kin.forward_kinematics(model, qm).as_vector()
        d[3:] = kin.wrap_angle(d[3:])
        J[:, k] = d / (2 * eps)
    return J


def test_wrap_angle_range():
    a = np.array([0.0, np.pi, -np.pi, 3 * np.pi, -7.5])
    w = kin.wrap_angle(a)
    assert np.all(w > -np.pi) and np.all(w <= np.pi)
    np.testing.assert_allclose(np.cos(w), np.cos(a), atol=1e-12)
    np.testing.assert_allclose(np.sin(w), np.sin(a), atol=1e-12)
    assert kin.wrap_angle(np.pi) == np.pi
    assert kin.wrap_angle(-np.pi) == np.pi


def test_euler_round_trip():
    rng = np.random.default_rng(11)
    for _ in range(200):
        yaw, roll = rng.uniform(-np.pi, np.pi, 2)
        pitch = rng.uniform(-1.4, 1.4)
        R = kin.rot_z(yaw) @ kin.rot_y(pitch) @ kin.rot_x(roll)
        out = kin.euler_zyx(R)
        np.testing.assert_allclose(out, [yaw, pitch, roll], atol=1e-12)


def test_rotation_axis_matches_elementary():
    a = 0.7
    np.testing.assert_allclose(kin.rotation_axis((0, 0, 1), a), kin.rot_z(a),
                               atol=1e-15)
    np.testing.assert_allclose(kin.rotation_axis((0, 1, 0), a), kin.rot_y(a),
                               atol=1e-15)
    np.testing.assert_allclose(kin.rotation_axis((1, 0, 0), a), kin.rot_x(a),
                               atol=1e-15)


def test_fk_matches_transform_product_2link():
    # Closed form for the planar arm: x = l1 c1 + l2 c12, y = l1 s1 + l2 s12.
    m = builtin_planar_2link()
    rng = np.random.default_rng(3)
    for _ in range(50):
        q = rng.uniform(-np.pi, np.pi, 2)
        pose = kin.forward_kinematics(m, q)
        x = 0.5 * np.cos(q[0]) + 0.5 * np.cos(q[0] + q[1])
        y = 0.5 * np.sin(q[0]) + 0.5 * np.sin(q[0] + q[1])
        np.testing.assert_allclose(pose.position, [x, y, 0.0], atol=1e-12)
        np.testing.assert_allclose(pose.orientation[0],
                                   kin.wrap_angle(q[0] + q[1]), atol=1e-12)


def test_base_joints_reproduce_base_pose():
    m = builtin_panda_on_base()
    qb = np.array([0.3, -0.2, 0.1, 0.4, -0.3, 0.2])
    q = np.concatenate([qb, np.zeros(7)])
    rotations, origins, _, _ = kin.chain_frames(m, q)
    np.testing.assert_allclose(origins[5], qb[:3], atol=1e-14)
    np.testing.assert_allclose(kin.euler_zyx(rotations[5]), qb[3:], atol=1e-12)


def test_jacobian_vs_finite_differences():
    m = builtin_panda_on_base()
    q0 = np.concatenate([np.zeros(6), [0, -0.78, 0, -2.35, 0, 1.57, 0.78]])
    rng = np.random.default_rng(7)
    for _ in range(25):
        q = q0 + rng.uniform(-0.3, 0.3, 13)
        J = kin.geometric_jacobian(m, q)
        Jfd = fd_jacobian(m, q)
        scale = max(1.0, np.max(np.abs(J)))
        assert np.max(np.abs(J - Jfd)) / scale < 1e-6


def test_jacobian_length_check():
    m = builtin_planar_2link()
    with pytest.raises(ValueError):
        kin.geometric_jacobian(m, np.zeros(3))


def test_representation_singular_flags():
    m2 = builtin_planar_2link()
    flag, det = kin.is_representation_singular(m2, [0.0, 0.0])
    assert flag and det == pytest.approx(0.0, abs=1e-12)
    flag, det = kin.is_representation_singular(m2, [0.0, np.pi / 2])
    assert not flag and det > 1e-3

    m = builtin_panda_on_base()
    q = np.concatenate([np.zeros(6), [0, -0.78, 0, -2.35, 0, 1.57, 0.78]])
    assert not kin.is_representation_singular(m, q)[0]
    q_pitch = q.copy()
    q_pitch[4] = np.pi / 2  # base pitch at the Euler singularity
    assert kin.is_representation_singular(m, q_pitch)[0]


def test_prediction_matrix_values():
    U = kin.prediction_matrix(0.1, 4, 2)
    expect = 0.1 * np.array([[1, 0], [2, 1], [3, 2], [4, 3]])
    np.testing.assert_allclose(U, expect)
    I1 = kin.accumulation_matrix(3)
    np.testing.assert_allclose(I1, np.tril(np.ones((3, 3))))


def test_predict_trajectory_matches_recursion():
    # Oracle: literal step-by-step rollout of the increment recursion.
    rng = np.random.default_rng(5)
    m, Nu, N, t = 3, 4, 6, 0.05
    q = rng.normal(size=m)
    qdp = rng.normal(size=m)
    delta = rng.normal(size=(Nu, m))
    q_traj, qdot_traj = kin.predict_joint_trajectory(q, qdp, delta, t, N)

    qd = qdp.copy()
    qq = q.copy()
    for i in range(N):
        if i < Nu:
            qd = qd + delta[i]
            np.testing.assert_allclose(qdot_traj[i], qd, atol=1e-13)
        qq = qq + t * qd
        np.testing.assert_allclose(q_traj[i], qq, atol=1e-13)


def test_predict_trajectory_rejects_bad_horizon():
    with pytest.raises(ValueError):
        kin.predict_joint_trajectory(np.zeros(2), np.zeros(2),
                                     np.zeros((3, 2)), 0.1, 2)
    with pytest.raises(ValueError):
        kin.predict_joint_trajectory(np.zeros(2), np.zeros(2),
                                     np.zeros((2, 2)), -0.1, 3)


def test_pose_error_shortest_arc():
    a = kin.Pose([0, 0, 0], [3.1, 0, 0])
    b = kin.Pose([0, 0, 0], [-3.1, 0, 0])
    err = kin.pose_error(a, b)
    assert abs(err[3]) < 0.1  # wraps through pi, not 6.2 rad


def test_pose_vector_round_trip():
    v = np.array([0.1, -0.2, 0.3, 0.5, -0.4, 2.9])
    np.testing.assert_allclose(kin.Pose.from_vector(v).as_vector(), v,
                               atol=1e-15)

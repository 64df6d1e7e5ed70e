"""Forward kinematics, analytic Jacobian, Euler-rate handling, and the
horizon discretization used by the predictive layer.

Orientation convention is Z-Y-X throughout: a pose orientation vector
``[yaw, pitch, roll]`` corresponds to ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``.
All transform helpers accept complex inputs so that callers can use
complex-step differentiation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import RobotModel

PITCH_SINGULARITY_TOL = 1e-9


def wrap_angle(a):
    """Map angles to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    out = -((-a + np.pi) % (2 * np.pi) - np.pi)
    return out if out.ndim else float(out)


def rot_x(a):
    c, s = np.cos(a), np.sin(a)
    one, zero = np.ones_like(c), np.zeros_like(c)
    return np.array([[one, zero, zero], [zero, c, -s], [zero, s, c]])


def rot_y(a):
    c, s = np.cos(a), np.sin(a)
    one, zero = np.ones_like(c), np.zeros_like(c)
    return np.array([[c, zero, s], [zero, one, zero], [-s, zero, c]])


def rot_z(a):
    c, s = np.cos(a), np.sin(a)
    one, zero = np.ones_like(c), np.zeros_like(c)
    return np.array([[c, -s, zero], [s, c, zero], [zero, zero, one]])


def rotation_rpy(rpy):
    """Fixed-frame rotation from (roll, pitch, yaw)."""
    return rot_z(rpy[2]) @ rot_y(rpy[1]) @ rot_x(rpy[0])


def rotation_axis(axis, angle):
    """Rodrigues rotation about a unit axis; complex-safe."""
    x, y, z = axis
    K = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    c, s = np.cos(angle), np.sin(angle)
    return np.eye(3) + s * K + (1.0 - c) * (K @ K)


def euler_zyx(R):
    """Extract [yaw, pitch, roll] from a rotation matrix."""
    pitch = np.arcsin(np.clip(-R[2, 0], -1.0, 1.0))
    if abs(np.cos(pitch)) < PITCH_SINGULARITY_TOL:
        # Gimbal lock: yaw/roll are coupled; pick roll = 0.
        yaw = np.arctan2(-R[0, 1], R[1, 1])
        roll = 0.0
    else:
        yaw = np.arctan2(R[1, 0], R[0, 0])
        roll = np.arctan2(R[2, 1], R[2, 2])
    return np.array([yaw, pitch, roll])


def euler_rate_matrix(yaw, pitch):
    """E such that body angular velocity w = E @ [yaw', pitch', roll']."""
    sy, cy = np.sin(yaw), np.cos(yaw)
    sp, cp = np.sin(pitch), np.cos(pitch)
    return np.array([[0.0, -sy, cy * cp],
                     [0.0, cy, sy * cp],
                     [1.0, 0.0, -sp]])


def rotation_vector(R):
    """Axis-angle (rotation vector) of a rotation matrix."""
    angle = np.arccos(np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0))
    if angle < 1e-12:
        return np.zeros(3)
    if np.pi - angle < 1e-6:
        # Near pi: use the symmetric part.
        A = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(A), 0.0))
        axis *= np.sign([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) + \
            (np.sign([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) == 0)
        axis /= np.linalg.norm(axis)
        return angle * axis
    axis = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return angle * axis / (2.0 * np.sin(angle))


@dataclass(frozen=True)
class Pose:
    """End-effector position (m) and Z-Y-X Euler orientation (rad)."""

    position: np.ndarray
    orientation: np.ndarray  # [yaw, pitch, roll]
    representation_singular: bool = False

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, float))
        object.__setattr__(self, "orientation",
                           wrap_angle(np.asarray(self.orientation, float)))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.orientation])

    @staticmethod
    def from_vector(v) -> "Pose":
        v = np.asarray(v, float)
        return Pose(v[:3], v[3:6])


@dataclass(frozen=True)
class ConfigurationState:
    """Joint state fed to the predictive layer.

    ``qdot_prev`` is the commanded velocity of the previous control step,
    the quantity the velocity recursion starts from.
    """

    q: np.ndarray
    qdot: np.ndarray
    qdot_prev: np.ndarray

    def __post_init__(self):
        for name in ("q", "qdot", "qdot_prev"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), float))
        if not (len(self.q) == len(self.qdot) == len(self.qdot_prev)):
            raise ValueError("state vectors must share one length")


def chain_frames(model: RobotModel, q):
    """Rotation and origin of every joint frame, plus the EE frame.

    Returns (rotations, origins, R_ee, p_ee); complex-safe in q.
    """
    q = np.asarray(q)
    dtype = np.result_type(q.dtype, float)
    R = np.eye(3, dtype=dtype)
    p = np.zeros(3, dtype=dtype)
    rotations, origins = [], []
    for joint, qi in zip(model.joints, q):
        p = p + R @ np.asarray(joint.origin_xyz, dtype=dtype)
        R = R @ rotation_rpy(joint.origin_rpy).astype(dtype)
        if joint.kind == "revolute":
            R = R @ rotation_axis(joint.axis, qi)
        else:
            p = p + R @ (np.asarray(joint.axis, dtype=dtype) * qi)
        rotations.append(R)
        origins.append(p)
    p_ee = p + R @ np.asarray(model.ee_offset_xyz, dtype=dtype)
    R_ee = R @ rotation_rpy(model.ee_offset_rpy).astype(dtype)
    return rotations, origins, R_ee, p_ee


def forward_kinematics(model: RobotModel, q) -> Pose:
    """End-effector pose p = F(q) for the full chain (base + arm)."""
    q = np.asarray(q, float)
    if len(q) != model.total_dof:
        raise ValueError(f"expected {model.total_dof} joint values, got {len(q)}")
    _, _, R_ee, p_ee = chain_frames(model, q)
    euler = euler_zyx(R_ee)
    singular = abs(np.cos(euler[1])) < 1e-6
    return Pose(p_ee.real, euler, representation_singular=singular)


def geometric_jacobian(model: RobotModel, q) -> np.ndarray:
    """Analytic (Euler-rate) Jacobian: pdot = J(q) qdot, 6 x m.

    Rows 0-2 are the translational Jacobian; rows 3-5 map joint rates to
    Euler-angle rates via the inverse angular-rate transform.
    """
    q = np.asarray(q, float)
    if len(q) != model.total_dof:
        raise ValueError(f"expected {model.total_dof} joint values, got {len(q)}")
    rotations, origins, R_ee, p_ee = chain_frames(model, q)
    m = model.total_dof
    Jv = np.zeros((3, m))
    Jw = np.zeros((3, m))
    for k, joint in enumerate(model.joints):
        axis_world = rotations[k] @ joint.axis
        if joint.kind == "revolute":
            Jv[:, k] = np.cross(axis_world, p_ee - origins[k])
            Jw[:, k] = axis_world
        else:
            Jv[:, k] = axis_world
    yaw, pitch, _ = euler_zyx(R_ee)
    E = euler_rate_matrix(yaw, pitch)
    J = np.zeros((6, m))
    J[:3] = Jv
    J[3:] = np.linalg.solve(E, Jw)
    return J


def is_representation_singular(model: RobotModel, q, tol: float = 1e-8):
    """Flag representation/task singularities.

    True when the base pitch is at +-pi/2 (within tol on its cosine) or
    when det(J Jt), restricted to the model's task rows, falls below tol.
    Returns (flag, det_value).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    q = np.asarray(q, float)
    if model.base_dof_count >= 5:
        theta_b = q[4]  # base pitch virtual joint
        if abs(np.cos(theta_b)) < max(tol, 1e-12):
            J = geometric_jacobian_safe(model, q)
            Jt = J[list(model.task_rows)]
            return True, float(np.linalg.det(Jt @ Jt.T))
    J = geometric_jacobian_safe(model, q)
    Jt = J[list(model.task_rows)]
    det = float(np.linalg.det(Jt @ Jt.T))
    return det < tol, det


def geometric_jacobian_safe(model: RobotModel, q) -> np.ndarray:
    """Jacobian that falls back to the geometric angular part when the
    Euler-rate transform is not invertible."""
    try:
        return geometric_jacobian(model, q)
    except np.linalg.LinAlgError:
        rotations, origins, R_ee, p_ee = chain_frames(model, np.asarray(q, float))
        m = model.total_dof
        J = np.zeros((6, m))
        for k, joint in enumerate(model.joints):
            axis_world = rotations[k] @ joint.axis
            if joint.kind == "revolute":
                J[:3, k] = np.cross(axis_world, p_ee - origins[k])
                J[3:, k] = axis_world
            else:
                J[:3, k] = axis_world
        return J


def prediction_matrix(t: float, N: int, Nu: int) -> np.ndarray:
    """Lower-band horizon matrix: entry (i, k) = max(0, i+1-k) * t.

    Maps stacked velocity increments to joint-angle offsets over the
    prediction horizon.
    """
    i = np.arange(1, N + 1)[:, None]
    k = np.arange(Nu)[None, :]
    return np.maximum(0, i - k) * t


def accumulation_matrix(Nu: int) -> np.ndarray:
    """Lower-triangular ones; maps increments to velocity offsets."""
    return np.tril(np.ones((Nu, Nu)))


def predict_joint_trajectory(q_j, qdot_prev, delta_v, t: float, N: int):
    """Roll the velocity-increment recursion forward over the horizon.

    Parameters
    ----------
    q_j : (m,) current joint vector
    qdot_prev : (m,) commanded velocity of the previous step
    delta_v : (Nu, m) stacked velocity increments
    t : sampling period, s
    N : prediction horizon (>= Nu); increments beyond Nu-1 are held at zero

    Returns
    -------
    q_traj : (N, m) predicted joint angles q(j+1) .. q(j+N)
    qdot_traj : (Nu, m) predicted velocities qdot(j) .. qdot(j+Nu-1)
    """
    q_j = np.asarray(q_j, float)
    qdot_prev = np.asarray(qdot_prev, float)
    delta_v = np.atleast_2d(np.asarray(delta_v, float))
    Nu = delta_v.shape[0]
    if t <= 0:
        raise ValueError("sampling period must be positive")
    if N < Nu:
        raise ValueError(f"prediction horizon N={N} shorter than Nu={Nu}")
    U = prediction_matrix(t, N, Nu)
    I1 = accumulation_matrix(Nu)
    qdot_traj = qdot_prev[None, :] + I1 @ delta_v
    steps = np.arange(1, N + 1)[:, None]
    q_traj = q_j[None, :] + steps * t * qdot_prev[None, :] + U @ delta_v
    return q_traj, qdot_traj


def pose_error(pose: Pose, ref: Pose) -> np.ndarray:
    """Pose difference with shortest-arc orientation components."""
    return np.concatenate([
        pose.position - ref.position,
        wrap_angle(pose.orientation - ref.orientation),
    ])

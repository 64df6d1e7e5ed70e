"""Receding-horizon pose-tracking QP assembly.

The quadratic program minimizes, over stacked joint-velocity increments
z, the weighted sum of linearized pose-tracking errors, joint
velocities, and velocity increments over the horizon, subject to
three-level (angle / velocity / acceleration) box constraints.
``direct_cost`` evaluates the same objective literally from the rolled
trajectory and serves as the equivalence oracle for the assembly.
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from . import kinematics as kin
from .kinematics import ConfigurationState, Pose
from .model import RobotModel


class SingularConfigurationError(ValueError):
    """Raised when the QP is assembled at a representation singularity."""


def _check_psd(A, name):
    A = np.asarray(A, float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"{name} must be square")
    if not np.allclose(A, A.T, atol=1e-10):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(A).min() < -1e-10:
        raise ValueError(f"{name} must be positive semidefinite")
    return A


@dataclass(frozen=True)
class PomptcWeights:
    """Cost weights: pose error (6x6), velocity and increment (m'xm')."""

    pose: np.ndarray
    velocity: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pose", _check_psd(self.pose, "pose weight"))
        object.__setattr__(self, "velocity",
                           _check_psd(self.velocity, "velocity weight"))
        object.__setattr__(self, "accel", _check_psd(self.accel, "accel weight"))
        if self.velocity.shape != self.accel.shape:
            raise ValueError("velocity and accel weights must match in size")
        if np.linalg.eigvalsh(self.accel).min() <= 0:
            raise ValueError("accel weight must be positive definite")


@dataclass(frozen=True)
class QpProblem:
    """Dense QP  min 1/2 z'Sz + G'z  s.t.  Hz <= w.

    H stacks six blocks in fixed order: position upper/lower, velocity
    upper/lower, acceleration upper/lower, each of size N*m' or Nu*m'.
    """

    S: np.ndarray
    G: np.ndarray
    H: np.ndarray
    w: np.ndarray
    t: float
    N: int
    Nu: int
    m_prime: int

    def __post_init__(self):
        for name in ("S", "G", "H", "w"):
            a = np.asarray(getattr(self, name), float).copy()
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        nz = self.m_prime * self.Nu
        if self.S.shape != (nz, nz):
            raise ValueError(f"S must be {nz}x{nz}")
        if self.G.shape != (nz,):
            raise ValueError(f"G must have length {nz}")
        nc = (2 * self.N + 4 * self.Nu) * self.m_prime
        if self.H.shape != (nc, nz) or self.w.shape != (nc,):
            raise ValueError(f"H/w must have {nc} rows")

    @property
    def n_variables(self) -> int:
        return self.m_prime * self.Nu

    @property
    def n_constraints(self) -> int:
        return (2 * self.N + 4 * self.Nu) * self.m_prime

    @property
    def position_rows(self) -> slice:
        """Rows encoding the joint-angle box (the relaxable block)."""
        return slice(0, 2 * self.N * self.m_prime)

    def objective(self, z) -> float:
        z = np.asarray(z, float)
        return float(0.5 * z @ self.S @ z + self.G @ z)

    def violation(self, z) -> float:
        return float(np.max(np.append(self.H @ np.asarray(z, float) - self.w, 0.0)))

    def relaxed(self, slack: float) -> "QpProblem":
        """Copy with the position rows loosened by ``slack`` (feasibility
        guard for states pinned against an angle limit)."""
        w = self.w.copy()
        w[self.position_rows] += slack
        return QpProblem(self.S, self.G, self.H, w, self.t, self.N,
                         self.Nu, self.m_prime)


def _horizon_refs(pose_refs):
    out = []
    for r in pose_refs:
        out.append(r if isinstance(r, Pose) else Pose.from_vector(r))
    return out


def assemble_qp(model: RobotModel, state: ConfigurationState, pose_refs,
                weights: PomptcWeights, t: float, N: int, Nu: int) -> QpProblem:
    """Build the dense QP for the current state and reference window.

    The pose over the horizon is linearized about the current
    configuration, p(j+i) ~ p(j) + J(q(j)) (q(j+i) - q(j)), with the
    Jacobian held constant.  Only MPC-actuated DOFs enter the decision
    vector; the remaining DOFs are frozen at the current state.
    """
    if not (N >= Nu >= 1):
        raise ValueError("need N >= Nu >= 1")
    if t <= 0:
        raise ValueError("sampling period must be positive")
    pose_refs = _horizon_refs(pose_refs)
    if len(pose_refs) != N:
        raise ValueError(f"expected {N} pose references, got {len(pose_refs)}")
    mask = model.actuated_by_mpc
    mp = int(np.count_nonzero(mask))
    singular, det = kin.is_representation_singular(model, state.q)
    if singular:
        raise SingularConfigurationError(
            f"configuration is representation-singular (det {det:.3e})")

    pose_now = kin.forward_kinematics(model, state.q)
    J = kin.geometric_jacobian(model, state.q)[:, mask]  # 6 x m'
    qdp = state.qdot_prev[mask]

    U = kin.prediction_matrix(t, N, Nu)       # N x Nu
    I1 = kin.accumulation_matrix(Nu)          # Nu x Nu
    Imp = np.eye(mp)

    # Stacked linear maps from z to pose errors and velocities.
    A_pose = np.kron(U, J)
    b_pose = np.empty(6 * N)
    for i in range(N):
        e_i = kin.pose_error(pose_now, pose_refs[i])
        b_pose[6 * i:6 * (i + 1)] = e_i + (i + 1) * t * (J @ qdp)
    A_vel = np.kron(I1, Imp)
    b_vel = np.tile(qdp, Nu)

    Cbar = np.kron(np.eye(N), weights.pose)
    B1bar = np.kron(np.eye(Nu), weights.velocity)
    B2bar = np.kron(np.eye(Nu), weights.accel)

    S = 2.0 * (A_pose.T @ Cbar @ A_pose + A_vel.T @ B1bar @ A_vel + B2bar)
    S = 0.5 * (S + S.T)
    G = 2.0 * (A_pose.T @ Cbar @ b_pose + A_vel.T @ B1bar @ b_vel)

    # Constraints, six blocks: q upper/lower, qdot upper/lower,
    # acceleration upper/lower.
    lim = model.limits
    qm = state.q[mask]
    T_q = np.kron(U, Imp)                     # maps z to q(j+i) - q(j)
    drift = np.concatenate([(i + 1) * t * qdp for i in range(N)])
    q_up = np.tile(lim.q_upper[mask], N) - np.tile(qm, N) - drift
    q_lo = np.tile(qm, N) + drift - np.tile(lim.q_lower[mask], N)
    v_up = np.tile(lim.qdot_upper[mask] - qdp, Nu)
    v_lo = np.tile(qdp - lim.qdot_lower[mask], Nu)
    a_up = np.tile(t * lim.qddot_upper[mask], Nu)
    a_lo = np.tile(-t * lim.qddot_lower[mask], Nu)
    Iz = np.eye(mp * Nu)
    H = np.vstack([T_q, -T_q, A_vel, -A_vel, Iz, -Iz])
    w = np.concatenate([q_up, q_lo, v_up, v_lo, a_up, a_lo])
    return QpProblem(S=S, G=G, H=H, w=w, t=t, N=N, Nu=Nu, m_prime=mp)


def direct_cost(model: RobotModel, state: ConfigurationState, pose_refs,
                weights: PomptcWeights, t: float, N: int, Nu: int, z) -> float:
    """Literal evaluation of the three weighted horizon sums.

    Rolls the trajectory forward step by step and sums the terms,
    independent of the assembled matrices; oracle for assemble_qp.
    """
    pose_refs = _horizon_refs(pose_refs)
    mask = model.actuated_by_mpc
    mp = int(np.count_nonzero(mask))
    z = np.asarray(z, float)
    if z.shape != (mp * Nu,):
        raise ValueError(f"z must have length {mp * Nu}")
    delta = z.reshape(Nu, mp)
    qm = state.q[mask]
    qdp = state.qdot_prev[mask]
    q_traj, qdot_traj = kin.predict_joint_trajectory(qm, qdp, delta, t, N)
    pose_now = kin.forward_kinematics(model, state.q)
    J = kin.geometric_jacobian(model, state.q)[:, mask]
    cost = 0.0
    for i in range(N):
        err = kin.pose_error(pose_now, pose_refs[i]) + J @ (q_traj[i] - qm)
        cost += err @ weights.pose @ err
    for i in range(Nu):
        cost += qdot_traj[i] @ weights.velocity @ qdot_traj[i]
        cost += delta[i] @ weights.accel @ delta[i]
    return float(cost)


def extract_first_increment(z_star, model: RobotModel) -> np.ndarray:
    """First m'-block of the solution, scattered into an m-vector."""
    z_star = np.asarray(z_star, float)
    mask = model.actuated_by_mpc
    mp = int(np.count_nonzero(mask))
    if z_star.size % mp:
        raise ValueError("solution length is not a multiple of m'")
    out = np.zeros(model.total_dof)
    out[mask] = z_star[:mp]
    return out


def problem_to_text(problem: QpProblem) -> str:
    """Serialize to the interchange text format: a dimension header
    followed by row-major values at 17 significant digits."""
    buf = io.StringIO()
    buf.write(f"{problem.n_variables} {problem.n_constraints} "
              f"{problem.N} {problem.Nu} {problem.m_prime} "
              f"{problem.t!r}\n")
    for row in problem.S:
        buf.write(" ".join(f"{x:.17g}" for x in row) + "\n")
    buf.write(" ".join(f"{x:.17g}" for x in problem.G) + "\n")
    for row in problem.H:
        buf.write(" ".join(f"{x:.17g}" for x in row) + "\n")
    buf.write(" ".join(f"{x:.17g}" for x in problem.w) + "\n")
    return buf.getvalue()


def problem_from_text(text: str) -> QpProblem:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty problem file")
    head = lines[0].split()
    if len(head) != 6:
        raise ValueError("malformed header: expected "
                         "'nz nc N Nu m_prime t'")
    nz, nc, N, Nu, mp = (int(x) for x in head[:5])
    t = float(head[5])
    vals = [np.fromstring(ln, sep=" ") for ln in lines[1:]]
    if len(vals) != nz + 1 + nc + 1:
        raise ValueError(f"expected {nz + nc + 2} data rows, got {len(vals)}")
    S = np.vstack(vals[:nz])
    G = vals[nz]
    H = np.vstack(vals[nz + 1:nz + 1 + nc])
    w = vals[nz + 1 + nc]
    return QpProblem(S=S, G=G, H=H, w=w, t=t, N=N, Nu=Nu, m_prime=mp)

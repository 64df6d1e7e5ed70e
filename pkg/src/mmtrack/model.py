"""Robot description, joint-limit tables, and scenario configuration loading.

A mobile manipulator is modelled as a single serial chain: six virtual
base joints (three prismatic x/y/z, then three revolute yaw/pitch/roll)
followed by the arm joints.  All types are immutable after construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import yaml


class ConfigError(ValueError):
    """Raised when a scenario document is malformed or inconsistent."""


def _freeze(a, dtype=float):
    out = np.asarray(a, dtype=dtype).copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class JointSpec:
    """One degree of freedom of the chain.

    The joint frame is reached from the parent frame by the fixed
    transform (origin_xyz, origin_rpy), then the joint moves about/along
    ``axis`` (unit vector in the joint frame).
    """

    kind: str  # "revolute" | "prismatic"
    axis: np.ndarray
    origin_xyz: np.ndarray
    origin_rpy: np.ndarray  # (roll, pitch, yaw), applied as Rz(yaw) Ry(pitch) Rx(roll)

    def __post_init__(self):
        if self.kind not in ("revolute", "prismatic"):
            raise ConfigError(f"unknown joint kind {self.kind!r}")
        object.__setattr__(self, "axis", _freeze(self.axis))
        object.__setattr__(self, "origin_xyz", _freeze(self.origin_xyz))
        object.__setattr__(self, "origin_rpy", _freeze(self.origin_rpy))
        n = np.linalg.norm(self.axis)
        if not math.isclose(n, 1.0, rel_tol=1e-9):
            raise ConfigError("joint axis must be a unit vector")


@dataclass(frozen=True)
class JointLimits:
    """Three-level box limits for every DOF (base DOFs first, then arm)."""

    q_lower: np.ndarray
    q_upper: np.ndarray
    qdot_lower: np.ndarray
    qdot_upper: np.ndarray
    qddot_lower: np.ndarray
    qddot_upper: np.ndarray

    def __post_init__(self):
        for name in ("q_lower", "q_upper", "qdot_lower", "qdot_upper",
                     "qddot_lower", "qddot_upper"):
            object.__setattr__(self, name, _freeze(getattr(self, name)))
        self.validate()

    def validate(self):
        m = len(self.q_lower)
        for name in ("q_upper", "qdot_lower", "qdot_upper",
                     "qddot_lower", "qddot_upper"):
            if len(getattr(self, name)) != m:
                raise ConfigError(f"limits.{name}: expected length {m}, "
                                  f"got {len(getattr(self, name))}")
        bad = np.flatnonzero(self.q_lower >= self.q_upper)
        if bad.size:
            raise ConfigError(f"limits: limit ordering violated at index {bad[0]}")
        for lo, hi, name in ((self.qdot_lower, self.qdot_upper, "qdot"),
                             (self.qddot_lower, self.qddot_upper, "qddot")):
            bad = np.flatnonzero(~((lo < 0) & (hi > 0)))
            if bad.size:
                raise ConfigError(
                    f"limits.{name}: bounds must straddle zero, violated at index {bad[0]}")

    @property
    def dof(self) -> int:
        return len(self.q_lower)


@dataclass(frozen=True)
class RobotModel:
    """Kinematic chain plus dynamic parameters of the arm links.

    ``joints`` covers every DOF: base virtual joints first (may be zero
    for a fixed-base arm), then the arm.  Dynamic parameters
    (``link_masses``, ``link_com_offsets``, ``rotor_inertia``) describe
    the arm links only; the base is treated as massless and exogenously
    driven.  ``task_rows`` selects which pose components are meaningful
    task coordinates (all six for a spatial arm, fewer for the planar
    test arm).
    """

    name: str
    base_dof_count: int
    arm_joint_count: int
    joints: tuple
    ee_offset_xyz: np.ndarray
    ee_offset_rpy: np.ndarray
    link_masses: np.ndarray
    link_com_offsets: np.ndarray  # (n, 3), COM of link i in its joint frame
    rotor_inertia: np.ndarray
    gravity: np.ndarray  # gravity vector in the base frame, m/s^2
    limits: JointLimits
    actuated_by_mpc: np.ndarray  # bool mask, length m
    task_rows: tuple = (0, 1, 2, 3, 4, 5)

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        for name in ("ee_offset_xyz", "ee_offset_rpy", "link_masses",
                     "link_com_offsets", "rotor_inertia", "gravity"):
            object.__setattr__(self, name, _freeze(getattr(self, name)))
        object.__setattr__(self, "actuated_by_mpc",
                           _freeze(self.actuated_by_mpc, dtype=bool))
        m = self.base_dof_count + self.arm_joint_count
        if len(self.joints) != m:
            raise ConfigError(f"expected {m} joints, got {len(self.joints)}")
        if self.limits.dof != m:
            raise ConfigError(
                f"limits cover {self.limits.dof} DOFs, model has {m}")
        n = self.arm_joint_count
        if self.link_masses.shape != (n,):
            raise ConfigError("link_masses must have one entry per arm joint")
        if np.any(self.link_masses <= 0):
            raise ConfigError("link masses must be positive")
        if self.link_com_offsets.shape != (n, 3):
            raise ConfigError("link_com_offsets must be (n, 3)")
        if self.actuated_by_mpc.shape != (m,):
            raise ConfigError("actuated_by_mpc mask length must equal total DOF")

    @property
    def total_dof(self) -> int:
        return self.base_dof_count + self.arm_joint_count

    @property
    def arm_slice(self) -> slice:
        return slice(self.base_dof_count, self.total_dof)

    @property
    def mpc_dof(self) -> int:
        return int(np.count_nonzero(self.actuated_by_mpc))


def _base_joints():
    ez = (0.0, 0.0, 1.0)
    return [
        JointSpec("prismatic", (1, 0, 0), (0, 0, 0), (0, 0, 0)),
        JointSpec("prismatic", (0, 1, 0), (0, 0, 0), (0, 0, 0)),
        JointSpec("prismatic", ez, (0, 0, 0), (0, 0, 0)),
        JointSpec("revolute", ez, (0, 0, 0), (0, 0, 0)),   # yaw
        JointSpec("revolute", (0, 1, 0), (0, 0, 0), (0, 0, 0)),  # pitch
        JointSpec("revolute", (1, 0, 0), (0, 0, 0), (0, 0, 0)),  # roll
    ]


# Surrogate 7-joint chain: frame layout follows the published Panda URDF
# joint origins; masses, COM offsets and rotor inertias are round-number
# stand-ins chosen for a well-conditioned mass matrix.
_PANDA_FRAMES = [
    ((0.0, 0.0, 0.333), (0.0, 0.0, 0.0)),
    ((0.0, 0.0, 0.0), (-math.pi / 2, 0.0, 0.0)),
    ((0.0, -0.316, 0.0), (math.pi / 2, 0.0, 0.0)),
    ((0.0825, 0.0, 0.0), (math.pi / 2, 0.0, 0.0)),
    ((-0.0825, 0.384, 0.0), (-math.pi / 2, 0.0, 0.0)),
    ((0.0, 0.0, 0.0), (math.pi / 2, 0.0, 0.0)),
    ((0.088, 0.0, 0.0), (math.pi / 2, 0.0, 0.0)),
]
_PANDA_MASSES = [3.0, 3.0, 2.5, 2.5, 2.0, 1.5, 0.5]
_PANDA_COMS = [
    (0.0, -0.03, -0.08),
    (0.0, -0.07, 0.03),
    (0.04, 0.03, -0.05),
    (-0.04, 0.08, 0.0),
    (0.0, 0.03, -0.10),
    (0.06, 0.0, 0.0),
    (0.0, 0.0, 0.08),
]

ARM_Q_UPPER = [2.5, 1.70, 2.5, -0.07, 2.5, 3.75, 2.5]
ARM_Q_LOWER = [-2.5, -1.70, -2.5, -3.07, -2.5, -0.01, -2.5]
ARM_QDOT_UPPER = [2, 2, 2, 2, 2.5, 2.5, 2.5]
ARM_QDDOT_UPPER = [15, 7, 10, 12, 15, 20, 20]
BASE_POS_UPPER = [1, 1, 3]
BASE_POS_LOWER = [-1, -1, -1]
BASE_ORI_UPPER = [1, 1, 1]
BASE_VEL_LIN_UPPER = [1, 1, 3]
BASE_VEL_ANG_UPPER = [1, 1, 1]
BASE_ACC_UPPER = [1, 1, 1]


def builtin_panda_on_base() -> RobotModel:
    """6-DOF virtual base plus the 7-joint surrogate arm (m = 13, n = 7)."""
    joints = _base_joints()
    for xyz, rpy in _PANDA_FRAMES:
        joints.append(JointSpec("revolute", (0, 0, 1), xyz, rpy))
    q_upper = np.concatenate([BASE_POS_UPPER, BASE_ORI_UPPER, ARM_Q_UPPER])
    q_lower = np.concatenate([BASE_POS_LOWER, [-1, -1, -1], ARM_Q_LOWER])
    qd_upper = np.concatenate([BASE_VEL_LIN_UPPER, BASE_VEL_ANG_UPPER, ARM_QDOT_UPPER])
    qd_lower = np.concatenate([[-1, -1, -1], [-1, -1, -1],
                               -np.asarray(ARM_QDOT_UPPER, float)])
    qdd_upper = np.concatenate([BASE_ACC_UPPER, BASE_ACC_UPPER, ARM_QDDOT_UPPER])
    qdd_lower = -qdd_upper
    mask = np.zeros(13, dtype=bool)
    mask[6:] = True
    return RobotModel(
        name="panda_on_base",
        base_dof_count=6,
        arm_joint_count=7,
        joints=joints,
        ee_offset_xyz=(0.0, 0.0, 0.107),
        ee_offset_rpy=(0.0, 0.0, 0.0),
        link_masses=_PANDA_MASSES,
        link_com_offsets=_PANDA_COMS,
        rotor_inertia=np.full(7, 0.1),
        gravity=(0.0, 0.0, -9.81),
        limits=JointLimits(q_lower, q_upper, qd_lower, qd_upper,
                           qdd_lower, qdd_upper),
        actuated_by_mpc=mask,
    )


def builtin_planar_2link(l1: float = 0.5, l2: float = 0.5,
                         m1: float = 1.0, m2: float = 1.0,
                         gravity: float = 9.81) -> RobotModel:
    """Fixed-base 2-link planar arm in the x-y plane (gravity along -y).

    Every closed-form oracle in the test suite runs against this model.
    """
    joints = [
        JointSpec("revolute", (0, 0, 1), (0, 0, 0), (0, 0, 0)),
        JointSpec("revolute", (0, 0, 1), (l1, 0, 0), (0, 0, 0)),
    ]
    big = 50.0
    return RobotModel(
        name="planar_2link",
        base_dof_count=0,
        arm_joint_count=2,
        joints=joints,
        ee_offset_xyz=(l2, 0.0, 0.0),
        ee_offset_rpy=(0.0, 0.0, 0.0),
        link_masses=(m1, m2),
        link_com_offsets=((l1 / 2, 0.0, 0.0), (l2 / 2, 0.0, 0.0)),
        rotor_inertia=(0.0, 0.0),
        gravity=(0.0, -gravity, 0.0),
        limits=JointLimits([-big, -big], [big, big],
                           [-big, -big], [big, big],
                           [-big, -big], [big, big]),
        actuated_by_mpc=(True, True),
        task_rows=(0, 1),
    )


_BUILTINS = {
    "panda_on_base": builtin_panda_on_base,
    "planar_2link": builtin_planar_2link,
}


@dataclass(frozen=True)
class ControllerParams:
    """Bundle of the controller-stack parameters loaded from a scenario."""

    weights: "object"           # pomptc.PomptcWeights
    horizon: int                # N
    control_horizon: int        # Nu
    ftcnd: "object"             # ftcnd.FtcndParams
    nftsm: "object"             # nftsm.NftsmParams
    pd_kp: float
    pd_kd: float
    compensate_base: bool


# Defaults mirror the nominal simulation parameter set.
_DEFAULTS = {
    "pomptc": {"pose_weight": 50000.0, "velocity_weight": 1.0,
               "accel_weight": 20.0, "horizon": 5, "control_horizon": 5},
    "ftcnd": {"xi": 5.0, "mu": 5.0, "lam": 1.0, "zeta": 30.0, "kappa": 0.8,
              "ode_step": 1e-3, "epsilon_h": 1e-8, "max_time": 50.0},
    "nftsm": {"alpha": 1.0, "beta": 1.0, "r1": 1.8, "r2": 1.6, "r3": 1.0,
              "c1": 20.0, "c2": 0.6, "delta": 0.05, "compensate_base": True},
    "pd": {"kp": 60.0, "kd": 25.0},
    "scenario": {"duration": 10.0, "control_period": 0.01,
                 "torque_period": 0.001,
                 "initial_q": None,
                 "reference": {"kind": "circle", "center": "auto",
                               "radius": 0.1,
                               "angular_rate": 2 * math.pi / 10.0,
                               "orientation": "auto"},
                 "base_motion": {"kind": "static"},
                 "disturbance": {"kind": "none"}},
}


def _section(doc, key):
    sec = dict(_DEFAULTS.get(key, {}))
    user = doc.get(key, {})
    if user is None:
        user = {}
    if not isinstance(user, dict):
        raise ConfigError(f"{key}: expected a mapping")
    for k, v in user.items():
        if isinstance(v, dict) and isinstance(sec.get(k), dict):
            merged = dict(sec[k])
            merged.update(v)
            sec[k] = merged
        else:
            sec[k] = v
    return sec


def _weight_matrix(value, size, path):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(size)
    if arr.shape == (size,):
        return np.diag(arr)
    if arr.shape == (size, size):
        return arr
    raise ConfigError(f"{path}: expected scalar, length-{size} diagonal, "
                      f"or {size}x{size} matrix")


def _build_robot(sec):
    if "builtin" in sec:
        name = sec["builtin"]
        if name not in _BUILTINS:
            raise ConfigError(f"robot.builtin: unknown model {name!r}")
        model = _BUILTINS[name]()
    else:
        raise ConfigError("robot: only builtin models are supported; "
                          "set robot.builtin to one of "
                          + ", ".join(sorted(_BUILTINS)))
    limits = sec.get("limits")
    if limits:
        kw = {}
        for key, attr in (("q_lower", "q_lower"), ("q_upper", "q_upper"),
                          ("qdot_lower", "qdot_lower"), ("qdot_upper", "qdot_upper"),
                          ("qddot_lower", "qddot_lower"), ("qddot_upper", "qddot_upper")):
            kw[attr] = np.asarray(limits.get(key, getattr(model.limits, attr)), float)
        try:
            model = replace(model, limits=JointLimits(**kw))
        except ConfigError as exc:
            raise ConfigError(f"robot.limits: {exc}") from None
    if "actuated_by_mpc" in sec:
        mask = np.asarray(sec["actuated_by_mpc"], dtype=bool)
        model = replace(model, actuated_by_mpc=mask)
    return model


def load_scenario(config_document: str):
    """Parse a YAML scenario document.

    Returns ``(RobotModel, ControllerParams, ScenarioScript)``.  Missing
    optional keys are filled with defaults; validation failures raise
    :class:`ConfigError` naming the offending key path.
    """
    from . import ftcnd as _ftcnd
    from . import nftsm as _nftsm
    from . import pomptc as _pomptc
    from . import sim as _sim

    try:
        doc = yaml.safe_load(config_document)
    except yaml.YAMLError as exc:
        raise ConfigError(f"parse failure: {exc}") from None
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("top level: expected a mapping")

    if "robot" not in doc:
        raise ConfigError("robot: section is required")
    model = _build_robot(doc["robot"])

    po = _section(doc, "pomptc")
    mprime = model.mpc_dof
    try:
        weights = _pomptc.PomptcWeights(
            pose=_weight_matrix(po["pose_weight"], 6, "pomptc.pose_weight"),
            velocity=_weight_matrix(po["velocity_weight"], mprime,
                                    "pomptc.velocity_weight"),
            accel=_weight_matrix(po["accel_weight"], mprime,
                                 "pomptc.accel_weight"),
        )
    except ValueError as exc:
        raise ConfigError(f"pomptc: {exc}") from None
    horizon = int(po["horizon"])
    control_horizon = int(po["control_horizon"])
    if not horizon >= control_horizon >= 1:
        raise ConfigError("pomptc.horizon: need horizon >= control_horizon >= 1")

    ft = _section(doc, "ftcnd")
    try:
        ftcnd_params = _ftcnd.FtcndParams(
            xi=float(ft["xi"]), mu=float(ft["mu"]), lam=float(ft["lam"]),
            zeta=float(ft["zeta"]), kappa=float(ft["kappa"]),
            ode_step=float(ft["ode_step"]), epsilon_h=float(ft["epsilon_h"]),
            max_time=float(ft["max_time"]))
    except ValueError as exc:
        raise ConfigError(f"ftcnd: {exc}") from None

    nf = _section(doc, "nftsm")
    try:
        nftsm_params = _nftsm.NftsmParams(
            alpha=float(nf["alpha"]), beta=float(nf["beta"]),
            r1=float(nf["r1"]), r2=float(nf["r2"]), r3=float(nf["r3"]),
            c1=float(nf["c1"]), c2=float(nf["c2"]), delta=float(nf["delta"]))
    except ValueError as exc:
        raise ConfigError(f"nftsm: {exc}") from None

    pd = _section(doc, "pd")
    params = ControllerParams(
        weights=weights, horizon=horizon, control_horizon=control_horizon,
        ftcnd=ftcnd_params, nftsm=nftsm_params,
        pd_kp=float(pd["kp"]), pd_kd=float(pd["kd"]),
        compensate_base=bool(nf["compensate_base"]))

    sc = _section(doc, "scenario")
    try:
        script = _sim.ScenarioScript.from_config(sc, model)
    except ValueError as exc:
        raise ConfigError(f"scenario: {exc}") from None
    return model, params, script


def serialize_scenario(model: RobotModel, params: ControllerParams,
                       script) -> str:
    """Emit a YAML document that :func:`load_scenario` parses back to an
    equal (model, params, script) triple."""
    doc = {
        "robot": {
            "builtin": model.name,
            "limits": {
                "q_lower": model.limits.q_lower.tolist(),
                "q_upper": model.limits.q_upper.tolist(),
                "qdot_lower": model.limits.qdot_lower.tolist(),
                "qdot_upper": model.limits.qdot_upper.tolist(),
                "qddot_lower": model.limits.qddot_lower.tolist(),
                "qddot_upper": model.limits.qddot_upper.tolist(),
            },
            "actuated_by_mpc": model.actuated_by_mpc.tolist(),
        },
        "pomptc": {
            "pose_weight": params.weights.pose.tolist(),
            "velocity_weight": params.weights.velocity.tolist(),
            "accel_weight": params.weights.accel.tolist(),
            "horizon": params.horizon,
            "control_horizon": params.control_horizon,
        },
        "ftcnd": {
            "xi": params.ftcnd.xi, "mu": params.ftcnd.mu,
            "lam": params.ftcnd.lam, "zeta": params.ftcnd.zeta,
            "kappa": params.ftcnd.kappa, "ode_step": params.ftcnd.ode_step,
            "epsilon_h": params.ftcnd.epsilon_h,
            "max_time": params.ftcnd.max_time,
        },
        "nftsm": {
            "alpha": params.nftsm.alpha, "beta": params.nftsm.beta,
            "r1": params.nftsm.r1, "r2": params.nftsm.r2,
            "r3": params.nftsm.r3, "c1": params.nftsm.c1,
            "c2": params.nftsm.c2, "delta": params.nftsm.delta,
            "compensate_base": params.compensate_base,
        },
        "pd": {"kp": params.pd_kp, "kd": params.pd_kd},
        "scenario": script.to_config(),
    }
    return yaml.safe_dump(doc, sort_keys=False)

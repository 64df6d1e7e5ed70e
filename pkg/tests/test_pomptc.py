import numpy as np
import pytest

from mmtrack import kinematics as kin
from mmtrack import pomptc
from mmtrack.kinematics import ConfigurationState, Pose
from mmtrack.model import builtin_panda_on_base, builtin_planar_2link

Q0 = np.concatenate([np.zeros(6), [0, -0.78, 0, -2.35, 0, 1.57, 0.78]])


def make_weights(model, pose=100.0, vel=1.0, acc=5.0):
    mp = model.mpc_dof
    return pomptc.PomptcWeights(pose=pose * np.eye(6),
                                velocity=vel * np.eye(mp),
                                accel=acc * np.eye(mp))


def random_state(model, rng, scale=0.1):
    q = Q0 + rng.uniform(-scale, scale, model.total_dof) \
        if model.total_dof == 13 else rng.uniform(-1, 1, model.total_dof)
    qdp = rng.uniform(-0.2, 0.2, model.total_dof)
    qdp[~model.actuated_by_mpc] = 0.0
    return ConfigurationState(q=q, qdot=qdp, qdot_prev=qdp)


def random_refs(model, state, rng, N):
    pose = kin.forward_kinematics(model, state.q)
    refs = []
    for _ in range(N):
        refs.append(Pose(pose.position + rng.uniform(-0.02, 0.02, 3),
                         pose.orientation + rng.uniform(-0.02, 0.02, 3)))
    return refs


def test_weights_validation():
    with pytest.raises(ValueError, match="symmetric"):
        pomptc.PomptcWeights(pose=np.triu(np.ones((6, 6))),
                             velocity=np.eye(2), accel=np.eye(2))
    with pytest.raises(ValueError, match="positive definite"):
        pomptc.PomptcWeights(pose=np.eye(6), velocity=np.eye(2),
                             accel=np.zeros((2, 2)))
    with pytest.raises(ValueError, match="square"):
        pomptc.PomptcWeights(pose=np.ones((6, 5)), velocity=np.eye(2),
                             accel=np.eye(2))


def test_qp_dimensions():
    model = builtin_panda_on_base()
    state = ConfigurationState(q=Q0, qdot=np.zeros(13), qdot_prev=np.zeros(13))
    refs = [kin.forward_kinematics(model, Q0)] * 5
    p = pomptc.assemble_qp(model, state, refs, make_weights(model),
                           0.01, 5, 5)
    assert p.n_variables == 35
    assert p.n_constraints == (2 * 5 + 4 * 5) * 7
    assert p.S.shape == (35, 35)
    assert np.allclose(p.S, p.S.T)
    assert np.linalg.eigvalsh(p.S).min() > 0


def test_cost_form_matches_direct_evaluation():
    # The assembled quadratic and the literal horizon sums must agree up
    # to a z-independent constant.
    rng = np.random.default_rng(21)
    for model in (builtin_panda_on_base(), builtin_planar_2link()):
        for _ in range(20):
            N = int(rng.integers(1, 5))
            Nu = int(rng.integers(1, N + 1))
            t = float(rng.uniform(0.005, 0.05))
            state = random_state(model, rng)
            refs = random_refs(model, state, rng, N)
            w = make_weights(model, pose=float(rng.uniform(10, 1000)))
            prob = pomptc.assemble_qp(model, state, refs, w, t, N, Nu)
            z0 = np.zeros(prob.n_variables)
            off = pomptc.direct_cost(model, state, refs, w, t, N, Nu, z0)
            for _ in range(5):
                z = rng.normal(scale=0.1, size=prob.n_variables)
                lhs = prob.objective(z) - prob.objective(z0)
                rhs = pomptc.direct_cost(model, state, refs, w, t, N, Nu, z) - off
                assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(rhs))


def test_constraints_sound_and_complete():
    # A point satisfying Hz <= w must roll out within the box, and a
    # rollout violating the box must violate Hz <= w.
    model = builtin_panda_on_base()
    rng = np.random.default_rng(33)
    state = random_state(model, rng, scale=0.05)
    N = Nu = 3
    t = 0.01
    prob = pomptc.assemble_qp(model, state, random_refs(model, state, rng, N),
                              make_weights(model), t, N, Nu)
    lim = model.limits
    mask = model.actuated_by_mpc
    for _ in range(200):
        z = rng.normal(scale=0.02, size=prob.n_variables)
        delta = z.reshape(Nu, model.mpc_dof)
        q_traj, qd_traj = kin.predict_joint_trajectory(
            state.q[mask], state.qdot_prev[mask], delta, t, N)
        acc = delta / t
        inside = (np.all(q_traj <= lim.q_upper[mask] + 1e-12)
                  and np.all(q_traj >= lim.q_lower[mask] - 1e-12)
                  and np.all(qd_traj <= lim.qdot_upper[mask] + 1e-12)
                  and np.all(qd_traj >= lim.qdot_lower[mask] - 1e-12)
                  and np.all(acc <= lim.qddot_upper[mask] + 1e-12)
                  and np.all(acc >= lim.qddot_lower[mask] - 1e-12))
        feasible = prob.violation(z) <= 1e-10
        assert inside == feasible


def test_translation_invariance():
    # Shifting the base x position and the references by the same offset
    # leaves the QP unchanged.
    model = builtin_panda_on_base()
    rng = np.random.default_rng(8)
    state = random_state(model, rng)
    refs = random_refs(model, state, rng, 4)
    w = make_weights(model)
    p1 = pomptc.assemble_qp(model, state, refs, w, 0.01, 4, 2)

    shift = np.array([0.2, 0.0, 0.0])
    q2 = state.q.copy()
    q2[0] += shift[0]
    state2 = ConfigurationState(q=q2, qdot=state.qdot,
                                qdot_prev=state.qdot_prev)
    refs2 = [kin.Pose(r.position + shift, r.orientation) for r in refs]
    p2 = pomptc.assemble_qp(model, state2, refs2, w, 0.01, 4, 2)
    np.testing.assert_allclose(p1.S, p2.S, atol=1e-9)
    np.testing.assert_allclose(p1.G, p2.G, atol=1e-9)
    np.testing.assert_allclose(p1.H, p2.H, atol=1e-12)
    # w differs only in the base-x angle rows, which are not MPC DOFs
    # for this model, so it is identical too.
    np.testing.assert_allclose(p1.w, p2.w, atol=1e-9)


def test_singular_configuration_rejected():
    model = builtin_planar_2link()
    state = ConfigurationState(q=np.zeros(2), qdot=np.zeros(2),
                               qdot_prev=np.zeros(2))
    refs = [Pose([1.0, 0.0, 0.0], [0.0, 0.0, 0.0])]
    with pytest.raises(pomptc.SingularConfigurationError):
        pomptc.assemble_qp(model, state, refs, make_weights(model),
                           0.01, 1, 1)


def test_horizon_validation():
    model = builtin_planar_2link()
    state = ConfigurationState(q=[0.3, 1.0], qdot=np.zeros(2),
                               qdot_prev=np.zeros(2))
    refs = [kin.forward_kinematics(model, state.q)]
    with pytest.raises(ValueError):
        pomptc.assemble_qp(model, state, refs, make_weights(model), 0.01, 1, 2)
    with pytest.raises(ValueError):
        pomptc.assemble_qp(model, state, refs * 2, make_weights(model),
                           -0.01, 2, 1)
    with pytest.raises(ValueError, match="references"):
        pomptc.assemble_qp(model, state, refs, make_weights(model), 0.01, 2, 1)


def test_extract_first_increment_scatter():
    model = builtin_panda_on_base()
    z = np.arange(35, dtype=float)
    out = pomptc.extract_first_increment(z, model)
    assert out.shape == (13,)
    np.testing.assert_allclose(out[:6], 0.0)
    np.testing.assert_allclose(out[6:], z[:7])


def test_relaxed_widens_position_rows_only():
    model = builtin_planar_2link()
    state = ConfigurationState(q=[0.3, 1.0], qdot=np.zeros(2),
                               qdot_prev=np.zeros(2))
    refs = [kin.forward_kinematics(model, state.q)] * 2
    p = pomptc.assemble_qp(model, state, refs, make_weights(model), 0.01, 2, 2)
    r = p.relaxed(0.5)
    rows = p.position_rows
    np.testing.assert_allclose(r.w[rows], p.w[rows] + 0.5)
    np.testing.assert_allclose(r.w[rows.stop:], p.w[rows.stop:])


def test_problem_text_round_trip():
    rng = np.random.default_rng(77)
    model = builtin_planar_2link()
    state = ConfigurationState(q=[0.3, 1.0], qdot=[0.1, -0.1],
                               qdot_prev=[0.1, -0.1])
    refs = random_refs(model, state, rng, 3)
    p = pomptc.assemble_qp(model, state, refs, make_weights(model), 0.01, 3, 2)
    q = pomptc.problem_from_text(pomptc.problem_to_text(p))
    np.testing.assert_array_equal(p.S, q.S)
    np.testing.assert_array_equal(p.G, q.G)
    np.testing.assert_array_equal(p.H, q.H)
    np.testing.assert_array_equal(p.w, q.w)
    assert (p.t, p.N, p.Nu, p.m_prime) == (q.t, q.N, q.Nu, q.m_prime)


def test_problem_from_text_rejects_malformed():
    with pytest.raises(ValueError):
        pomptc.problem_from_text("")
    with pytest.raises(ValueError):
        pomptc.problem_from_text("1 2 3\n0 0\n")

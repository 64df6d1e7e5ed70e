import warnings

import numpy as np
import pytest

from mmtrack import dynamics, nftsm
from mmtrack.dynamics import ErrorState
from mmtrack.model import builtin_planar_2link
from mmtrack.nftsm import NftsmParams


def make_params(**kw):
    kw.setdefault("r3", 0.9)
    return NftsmParams(**kw)


def test_params_validation():
    with pytest.raises(ValueError, match="alpha"):
        make_params(alpha=0.0)
    with pytest.raises(ValueError, match="r2"):
        make_params(r2=2.5)
    with pytest.raises(ValueError, match="r1"):
        make_params(r1=1.5, r2=1.6)
    with pytest.raises(ValueError, match="r3"):
        make_params(r3=1.2)
    with pytest.raises(ValueError, match="r3"):
        make_params(r3=0.0)
    with pytest.raises(ValueError, match="c1"):
        make_params(c1=-1.0)
    with pytest.raises(ValueError, match="delta"):
        make_params(delta=0.0)


def test_r3_equal_one_warns():
    with pytest.warns(UserWarning, match="r3"):
        NftsmParams(r3=1.0)


def test_saturation_branches():
    d = 0.05
    assert nftsm.saturation(2 * d, d) == 1.0
    assert nftsm.saturation(0.5 * d, d) == pytest.approx(0.5)
    assert nftsm.saturation(-3 * d, d) == -1.0
    np.testing.assert_allclose(nftsm.saturation([0.0, d], d), [0.0, 1.0])
    with pytest.raises(ValueError):
        nftsm.saturation(1.0, 0.0)


def test_surface_values_and_oddness():
    p = make_params()
    z = np.zeros(2)
    np.testing.assert_allclose(
        nftsm.sliding_surface(ErrorState(z, z), p), 0.0)
    # e1 = 0, e2 = 1: s = beta * sat(1/delta) * 1^r2 = 1.
    s = nftsm.sliding_surface(ErrorState(np.array([0.0]), np.array([1.0])), p)
    assert s[0] == pytest.approx(1.0)
    rng = np.random.default_rng(2)
    for _ in range(20):
        e1 = rng.normal(size=3)
        e2 = rng.normal(size=3)
        sp = nftsm.sliding_surface(ErrorState(e1, e2), p)
        sm = nftsm.sliding_surface(ErrorState(-e1, -e2), p)
        np.testing.assert_allclose(sm, -sp, atol=1e-14)


def test_torque_finite_at_zero_velocity_error():
    # The classical terminal-SM singularity (division by e2 -> 0) must
    # not appear: the equivalent control multiplies by |e2|^(2-r2).
    model = builtin_planar_2link()
    desired = {"q_md": np.array([0.8, -0.4]), "qd_md": np.zeros(2),
               "qdd_md": np.zeros(2)}
    tau, diag = nftsm.control_torque(model, [0.3, 1.0], [0.0, 0.0],
                                     desired, make_params())
    assert np.all(np.isfinite(tau))
    assert np.all(np.isfinite(diag.s))


def test_torque_zero_error_is_pure_compensation():
    model = builtin_planar_2link()
    q = np.array([0.3, 1.0])
    desired = {"q_md": q, "qd_md": np.zeros(2), "qdd_md": np.zeros(2)}
    tau, diag = nftsm.control_torque(model, q, np.zeros(2), desired,
                                     make_params())
    # s = 0, u_sw = 0, u_eq = -M^-1 G, so tau = G exactly.
    terms = dynamics.dynamics_terms(model, q, np.zeros(2))
    np.testing.assert_allclose(tau, terms.G, atol=1e-10)
    np.testing.assert_allclose(diag.s, 0.0, atol=1e-15)
    assert diag.V == 0.0


def _settle_time(params, steps=7000, dt=1e-3, tol=1e-3):
    """Closed-loop regulation on the 2-link arm; time until the joint
    error enters and never leaves the tol ball."""
    model = builtin_planar_2link()
    q_des = np.array([0.8, -0.4])
    desired = {"q_md": q_des, "qd_md": np.zeros(2), "qdd_md": np.zeros(2)}
    q = np.array([1.0, -0.6])
    qd = np.zeros(2)
    err = np.zeros(steps)
    for i in range(steps):
        tau, _ = nftsm.control_torque(model, q, qd, desired, params)
        qdd = dynamics.forward_dynamics(model, q, qd, tau)
        qd = qd + dt * qdd
        q = q + dt * qd
        err[i] = np.max(np.abs(q - q_des))
    assert err[-1] <= tol, f"did not settle: final error {err[-1]:.2e}"
    above = np.flatnonzero(err > tol)
    return (above[-1] + 1) * dt if above.size else 0.0


@pytest.mark.parametrize("r3", [0.9, 1.0])
def test_closed_loop_regulation(r3):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        slow = NftsmParams(r3=r3, c1=20.0)
        fast = NftsmParams(r3=r3, c1=40.0)
    t_slow = _settle_time(slow)
    t_fast = _settle_time(fast)
    assert t_fast < t_slow


def test_lyapunov_rate_negative_outside_boundary_layer():
    model = builtin_planar_2link()
    params = make_params()
    q_des = np.array([0.8, -0.4])
    desired = {"q_md": q_des, "qd_md": np.zeros(2), "qdd_md": np.zeros(2)}
    q = np.array([1.6, -1.2])
    qd = np.zeros(2)
    dt = 1e-3
    s_prev = None
    for _ in range(1500):
        tau, diag = nftsm.control_torque(model, q, qd, desired, params)
        if s_prev is not None and not diag.inside_boundary_layer.any():
            rep = nftsm.lyapunov_diagnostics(s_prev, diag.s, dt, params.delta)
            assert rep.Vdot_estimate < 0.0
            np.testing.assert_allclose(rep.V, 0.5 * diag.s @ diag.s)
        s_prev = diag.s
        qdd = dynamics.forward_dynamics(model, q, qd, tau)
        qd = qd + dt * qdd
        q = q + dt * qd


def test_lyapunov_diagnostics_validation():
    with pytest.raises(ValueError):
        nftsm.lyapunov_diagnostics(np.zeros(2), np.zeros(2), 0.0)

"""Finite-time convergent neural dynamics for the tracking QP.

The inequality-constrained QP is lifted with non-negative slacks into
the linear optimality system N v + D = 0, v = [z; phi], and integrated
as N vdot = -mu * Omega(N v + D) with the Li activation.  Because
hdot = N vdot, the residual h obeys the decoupled scalar dynamics
hdot_i = -mu * omega(h_i), which is what yields the finite-time bound.

Treating phi as a free variable would collapse the lift to the
unconstrained problem; the slack non-negativity is enforced here by
exact projection events: integration steps are split where a slack hits
zero (the component is then clamped and its row leaves the residual) or
where a clamped row's gradient crosses zero (the component re-enters the
residual at exactly zero).  Along every accepted step each residual
component decays monotonically, so hT h is non-increasing and the
per-component finite-time bound is preserved.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

_TIKHONOV = 1e-10
_EVENT_TOL = 1e-14


class FtcndIntegrationError(RuntimeError):
    """Raised when the ODE state becomes non-finite (step too large)."""


@dataclass(frozen=True)
class FtcndParams:
    """Gains and integration settings of the neural-dynamics solver."""

    xi: float = 5.0
    mu: float = 5.0
    lam: float = 1.0
    zeta: float = 30.0
    kappa: float = 0.8
    ode_step: float = 1e-4
    epsilon_h: float = 1e-8
    max_time: float = 50.0

    def __post_init__(self):
        if not 0.0 < self.kappa < 1.0:
            raise ValueError("kappa must lie strictly inside (0, 1)")
        for name in ("xi", "mu", "lam", "zeta", "ode_step", "epsilon_h",
                     "max_time"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class NeuralState:
    """Augmented variable v = [z; phi] and its residual h at a virtual time."""

    v: np.ndarray
    h: np.ndarray
    virtual_time: float


@dataclass
class FtcndDiagnostics:
    converged: bool
    converge_time: float
    bound_t_f: float
    iterations: int
    h_inf_history: list = field(default_factory=list)
    f_history: list = field(default_factory=list)
    time_history: list = field(default_factory=list)
    projection_events: int = 0
    release_events: int = 0
    step_halvings: int = 0
    constraint_violation: float = 0.0
    equality_residual: float = 0.0
    final_state: NeuralState | None = None

    @property
    def within_bound(self) -> bool:
        return self.converge_time <= self.bound_t_f + 1e-12


def signed_power(h, p):
    """Lip^p: sign(h) |h|^p elementwise, zero at zero."""
    h = np.asarray(h, float)
    return np.sign(h) * np.abs(h) ** p


def li_activation(h, lam: float, zeta: float, kappa: float):
    """Li function: odd, monotone, with a fractional-power term that
    drives the residual to zero in finite time."""
    if not 0.0 < kappa < 1.0:
        raise ValueError("kappa must lie strictly inside (0, 1)")
    h = np.asarray(h, float)
    return 0.5 * lam * (signed_power(h, kappa) + signed_power(h, 1.0 / kappa)) \
        + 0.5 * zeta * h


def finite_time_bound(h0, mu: float, kappa: float) -> float:
    """Upper bound on the virtual time to drive the residual to zero:
    2 |h_max(0)|^(1-kappa) / (mu (1-kappa))."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    if not 0.0 < kappa < 1.0:
        raise ValueError("kappa must lie strictly inside (0, 1)")
    h0 = np.atleast_1d(np.asarray(h0, float))
    if h0.size == 0:
        return 0.0
    hmax = float(np.max(np.abs(h0)))
    return 2.0 * hmax ** (1.0 - kappa) / (mu * (1.0 - kappa))


def lift(problem, xi: float):
    """Slack-variable lift of the QP into N v + D = 0.

    N = [[S + xi H'H, xi H'], [xi H, xi I]],  D = [G - xi H'w; -xi w],
    v0 = [0; max(0, w)].
    """
    if xi <= 0:
        raise ValueError("penalty factor xi must be positive")
    S, G, H, w = problem.S, problem.G, problem.H, problem.w
    nc = H.shape[0]
    N = np.block([[S + xi * H.T @ H, xi * H.T],
                  [xi * H, xi * np.eye(nc)]])
    D = np.concatenate([G - xi * H.T @ w, -xi * w])
    v0 = np.concatenate([np.zeros(S.shape[0]), np.maximum(0.0, w)])
    return N, D, v0


def _factor(N_red):
    try:
        return cho_factor(N_red, lower=True)
    except np.linalg.LinAlgError:
        return cho_factor(N_red + _TIKHONOV * np.eye(N_red.shape[0]),
                          lower=True)


def solve(problem, params: FtcndParams, warm_start=None):
    """Integrate the neural dynamics until the residual settles.

    Returns (z_star, FtcndDiagnostics).  The reported residual is the
    projected optimality residual: free components of N v + D, with
    clamped slack rows counted as zero while their gradients stay
    non-negative.  Non-convergence within max_time returns the best
    iterate with ``converged=False``.
    """
    S, H, w = problem.S, problem.H, problem.w
    nz = problem.n_variables
    nc = problem.n_constraints
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise ValueError("QP must be strictly convex (S positive definite)")

    Nmat, Dvec, v0 = lift(problem, params.xi)
    if warm_start is not None:
        v = np.array(warm_start, float, copy=True)
        if v.shape != (nz + nc,):
            raise ValueError(f"warm start must have length {nz + nc}")
        v[nz:] = np.maximum(v[nz:], 0.0)
    else:
        v = v0.copy()

    h_full = Nmat @ v + Dvec
    clamped = (v[nz:] <= 0.0) & (h_full[nz:] > 0.0)
    v[nz:][clamped] = 0.0

    diag = FtcndDiagnostics(converged=False, converge_time=math.inf,
                            bound_t_f=0.0, iterations=0)
    free = np.concatenate([np.arange(nz), nz + np.flatnonzero(~clamped)])
    h = (Nmat @ v + Dvec)[free]
    diag.bound_t_f = finite_time_bound(h, params.mu, params.kappa)

    time = 0.0
    dt = params.ode_step
    eps = params.epsilon_h
    need_refactor = True
    fac = None
    slack_local = np.zeros(0, dtype=int)
    F = float(h @ h)
    diag.time_history.append(time)
    diag.h_inf_history.append(float(np.max(np.abs(h))))
    diag.f_history.append(F)
    max_events = 100 + 10 * nc
    events = 0

    while time < params.max_time and events <= max_events:
        if need_refactor:
            free = np.concatenate([np.arange(nz),
                                   nz + np.flatnonzero(~clamped)])
            fac = _factor(Nmat[np.ix_(free, free)])
            h = (Nmat @ v + Dvec)[free]
            F = float(h @ h)
            slack_local = np.arange(nz, free.size)
            need_refactor = False

        h_inf = float(np.max(np.abs(h)))
        if h_inf <= eps:
            # Reduced system converged; release clamped rows whose
            # gradient turned negative (rare: only reachable from a warm
            # start), otherwise done.
            if clamped.any():
                g = H[clamped] @ v[:nz] - w[clamped]
                stuck = np.flatnonzero(clamped)[g < -max(_EVENT_TOL, eps)]
                if stuck.size:
                    clamped[stuck] = False
                    diag.release_events += stuck.size
                    events += stuck.size
                    need_refactor = True
                    continue
            diag.converged = True
            diag.converge_time = time
            break

        dh = -params.mu * dt * li_activation(h, params.lam, params.zeta,
                                             params.kappa)
        h_new = h + dh
        F_new = float(h_new @ h_new)
        if F_new > F + 1e-16:
            dt *= 0.5
            diag.step_halvings += 1
            if dt < 1e-300:
                raise FtcndIntegrationError("step size underflow")
            continue

        dv = cho_solve(fac, dh)
        # Events: a free slack hitting zero, or a clamped row's gradient
        # crossing zero; split the step exactly at the first event.
        theta = 1.0
        phi_old = v[free[slack_local]]
        phi_new = phi_old + dv[slack_local]
        crossing = np.flatnonzero(phi_new < 0.0)
        if crossing.size:
            th = phi_old[crossing] / (phi_old[crossing] - phi_new[crossing])
            theta = min(theta, float(np.min(th)))
        clamped_idx = np.flatnonzero(clamped)
        release_hit = False
        if clamped_idx.size:
            Hc = H[clamped_idx]
            g_old = Hc @ v[:nz] - w[clamped_idx]
            g_new = g_old + Hc @ dv[:nz]
            going_neg = (g_new < 0.0) & (g_old >= 0.0)
            if going_neg.any():
                th = g_old[going_neg] / (g_old[going_neg] - g_new[going_neg])
                th_min = float(np.min(th))
                if th_min <= theta:
                    theta = th_min
                    release_hit = True

        theta = min(max(theta, 0.0), 1.0)
        v[free] += theta * dv
        h = h + theta * dh
        F = float(h @ h)
        if not np.isfinite(F):
            raise FtcndIntegrationError("non-finite neural state")
        time += theta * dt
        diag.iterations += 1
        diag.time_history.append(time)
        diag.h_inf_history.append(float(np.max(np.abs(h))))
        diag.f_history.append(F)

        if theta < 1.0:
            phi = v[nz:]
            hit = np.flatnonzero((~clamped) & (phi <= _EVENT_TOL))
            if hit.size:
                phi[hit] = 0.0
                clamped[hit] = True
                diag.projection_events += hit.size
                events += hit.size
            if release_hit:
                g_now = H[clamped_idx] @ v[:nz] - w[clamped_idx]
                rel = clamped_idx[g_now <= _EVENT_TOL]
                if rel.size:
                    clamped[rel] = False
                    diag.release_events += rel.size
                    events += rel.size
            need_refactor = True
            continue

        dt = min(dt * 2.0, params.ode_step)

    z = v[:nz].copy()
    diag.constraint_violation = problem.violation(z)
    resid = Nmat @ v + Dvec
    free = np.concatenate([np.arange(nz), nz + np.flatnonzero(~clamped)])
    diag.equality_residual = float(np.max(np.abs(resid[nz:][~clamped]))
                                   / params.xi) if (~clamped).any() else 0.0
    diag.final_state = NeuralState(v=v, h=resid[free], virtual_time=time)
    if not diag.converged:
        diag.converge_time = math.inf
    return z, diag


def diagnostics_to_csv(diag: FtcndDiagnostics, path):
    """Write the solver trace (virtual_time, h_inf, F_value) as CSV."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("virtual_time,h_inf,F_value\n")
        for t, hi, f in zip(diag.time_history, diag.h_inf_history,
                            diag.f_history):
            fh.write(f"{t:.17g},{hi:.17g},{f:.17g}\n")

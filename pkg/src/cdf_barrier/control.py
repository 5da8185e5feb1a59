"""Closed-loop execution: reference governor, PD tracking, and safety filters.

The plant is velocity-controlled (q_dot = u), so the PD law's derivative term
uses the previously applied command. Safety filters minimally modify the
nominal command subject to the control barrier condition, either with a point
estimate (CBF-QP) or robustly over an empirical Wasserstein ball of
uncertainty samples (DR-CBF-QP).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .barrier import BarrierEval, UncertaintySample, eval_barrier, sample_uncertainty
from .bezier import PiecewiseBezier
from .qp import ConvexProblem, constraint_violation, solve


@dataclass
class ControlParams:
    K_P: float = 0.8
    K_D: float = 0.1
    alpha_slope: float = 1.0
    k: float = 0.2
    zeta: float = 12.0
    eps: float = 0.1
    N: int = 10
    wasserstein_r: float = 0.02
    M2: int = 10
    u_min: np.ndarray | float = -2.0
    u_max: np.ndarray | float = 2.0
    control_hz: float = 50.0

    def box(self, m: int):
        lo = np.full(m, float(np.min(self.u_min))) if np.isscalar(self.u_min) else np.asarray(self.u_min, dtype=float)
        hi = np.full(m, float(np.max(self.u_max))) if np.isscalar(self.u_max) else np.asarray(self.u_max, dtype=float)
        return lo, hi

    @property
    def dt(self) -> float:
        return 1.0 / self.control_hz


@dataclass
class GovernorState:
    s: float
    reference: np.ndarray


@dataclass
class FilterDiagnostics:
    h: float = np.nan
    cbc_value: float = np.nan
    filter_active: bool = False
    unsafe_fallback: bool = False
    solver_status: str = ""


def init_governor(traj: PiecewiseBezier) -> GovernorState:
    return GovernorState(s=0.0, reference=traj.eval(0.0))


def governor_step(state: GovernorState, q: np.ndarray, traj: PiecewiseBezier,
                  dt: float, params: ControlParams) -> GovernorState:
    """Advance the progress variable: s_dot = k/(1+dist) * (1 - s^zeta)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    gamma_s = traj.eval(state.s)
    dist = float(np.linalg.norm(np.asarray(q, dtype=float) - gamma_s))
    s_dot = params.k / (1.0 + dist) * (1.0 - state.s ** params.zeta)
    s_new = min(1.0, max(state.s, state.s + dt * s_dot))
    return GovernorState(s=s_new, reference=traj.eval(s_new))


def pd_nominal(q: np.ndarray, q_dot: np.ndarray, gamma_s: np.ndarray,
               params: ControlParams) -> np.ndarray:
    return -params.K_P * (np.asarray(q, dtype=float) - gamma_s) - params.K_D * np.asarray(q_dot, dtype=float)


def cbc(ev: BarrierEval, u: np.ndarray, alpha_slope: float) -> float:
    """Control barrier condition: grad_q h . u + dh/dt + alpha(h)."""
    return float(ev.grad_q @ u + ev.dhdt + alpha_slope * ev.value)


def _box_argmax_linear(c: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Maximizer of c.u over a box (ties resolved toward the upper bound)."""
    return np.where(c >= 0, hi, lo)


def cbf_qp(u_bar: np.ndarray, ev: BarrierEval, params: ControlParams):
    """Minimally modify u_bar subject to CBC >= 0 and the control box.

    When no box control satisfies the CBC, returns the box-clamped CBC
    maximizer with the unsafe flag set.
    """
    u_bar = np.asarray(u_bar, dtype=float)
    m = u_bar.size
    lo, hi = params.box(m)
    affine = ev.dhdt + params.alpha_slope * ev.value
    diag = FilterDiagnostics(h=ev.value)

    u_best = _box_argmax_linear(ev.grad_q, lo, hi)
    if cbc(ev, u_best, params.alpha_slope) < 0.0:
        diag.unsafe_fallback = True
        diag.filter_active = True
        diag.cbc_value = cbc(ev, u_best, params.alpha_slope)
        diag.solver_status = "fallback"
        return u_best, diag

    in_box = np.all(u_bar >= lo - 1e-12) and np.all(u_bar <= hi + 1e-12)
    if in_box and cbc(ev, u_bar, params.alpha_slope) >= 0.0:
        diag.cbc_value = cbc(ev, u_bar, params.alpha_slope)
        diag.solver_status = "inactive"
        return u_bar.copy(), diag

    prob = ConvexProblem(
        H=2.0 * np.eye(m), g=-2.0 * u_bar,
        C=-ev.grad_q[None, :], d=np.array([affine]),
        lo=lo, hi=hi,
    )
    rep = solve(prob, tol_primal=1e-9, tol_dual=1e-9)
    u = np.clip(rep.x, lo, hi)
    if rep.status != "optimal" and constraint_violation(prob, u) > 1e-6:
        diag.unsafe_fallback = True
        u = u_best
    diag.filter_active = True
    diag.cbc_value = cbc(ev, u, params.alpha_slope)
    diag.solver_status = diag.solver_status or rep.status
    return u, diag


def dr_cbf_qp(u_bar: np.ndarray, samples: list[UncertaintySample], params: ControlParams):
    """Distributionally robust CBF filter over N uncertainty samples.

    Variables (u, s, beta, t) with constraints
        r*|u_j| <= t,  t <= s*eps - mean(beta),  beta_i >= 0,
        beta_i >= s - xi_i . [u; 1; 1],  u in box.
    Infeasibility falls back to maximizing the worst sample's CBC over the box.
    """
    u_bar = np.asarray(u_bar, dtype=float)
    m = u_bar.size
    N = len(samples)
    if N < 1:
        raise ValueError("need at least one uncertainty sample")
    lo, hi = params.box(m)
    r = params.wasserstein_r
    eps = params.eps
    diag = FilterDiagnostics()

    grads = np.array([s.grad_q for s in samples])
    affine = np.array([s.alpha_term + s.dhdt for s in samples])

    def sample_cbc(u):
        return grads @ u + affine

    # worst-sample fallback: the sample whose best achievable CBC is smallest
    best_cbcs = np.array([g @ _box_argmax_linear(g, lo, hi) for g in grads]) + affine
    worst = int(np.argmin(best_cbcs))
    u_fallback = _box_argmax_linear(grads[worst], lo, hi)

    if best_cbcs[worst] < 0.0:
        diag.unsafe_fallback = True
        diag.filter_active = True
        diag.cbc_value = float(np.min(sample_cbc(u_fallback)))
        diag.solver_status = "fallback"
        return u_fallback, diag

    # u_bar with (s = min CBC, beta = 0, t = r*|u_bar|_inf) is feasible, hence optimal
    in_box = np.all(u_bar >= lo - 1e-12) and np.all(u_bar <= hi + 1e-12)
    if in_box and r * np.max(np.abs(u_bar), initial=0.0) <= eps * float(np.min(sample_cbc(u_bar))):
        diag.cbc_value = float(np.min(sample_cbc(u_bar)))
        diag.solver_status = "inactive"
        return u_bar.copy(), diag

    # variable layout: [u (m), s, beta (N), t]
    nv = m + 1 + N + 1
    i_s = m
    i_beta = m + 1
    i_t = m + 1 + N
    H = np.zeros((nv, nv))
    H[:m, :m] = 2.0 * np.eye(m)
    g = np.zeros(nv)
    g[:m] = -2.0 * u_bar

    rows, rhs = [], []
    for j in range(m):            # r*u_j <= t and -r*u_j <= t
        for sign in (1.0, -1.0):
            row = np.zeros(nv)
            row[j] = sign * r
            row[i_t] = -1.0
            rows.append(row)
            rhs.append(0.0)
    row = np.zeros(nv)            # t - s*eps + mean(beta) <= 0
    row[i_t] = 1.0
    row[i_s] = -eps
    row[i_beta:i_beta + N] = 1.0 / N
    rows.append(row)
    rhs.append(0.0)
    for i in range(N):            # beta_i >= 0
        row = np.zeros(nv)
        row[i_beta + i] = -1.0
        rows.append(row)
        rhs.append(0.0)
    for i in range(N):            # s - xi_i.[u;1;1] - beta_i <= 0
        row = np.zeros(nv)
        row[:m] = -grads[i]
        row[i_s] = 1.0
        row[i_beta + i] = -1.0
        rows.append(row)
        rhs.append(affine[i])

    lo_v = np.full(nv, -np.inf)
    hi_v = np.full(nv, np.inf)
    lo_v[:m] = lo
    hi_v[:m] = hi
    x0 = np.zeros(nv)
    x0[:m] = np.clip(u_bar, lo, hi)

    prob = ConvexProblem(H=H, g=g, C=np.array(rows), d=np.array(rhs),
                         lo=lo_v, hi=hi_v, x0=x0)
    rep = solve(prob, tol_primal=1e-8, tol_dual=1e-8, max_iter=20000)
    u = np.clip(rep.x[:m], lo, hi)
    ok = rep.status == "optimal" or constraint_violation(prob, rep.x) <= 1e-6
    if not ok:
        diag.unsafe_fallback = True
        diag.filter_active = True
        diag.cbc_value = float(np.min(sample_cbc(u_fallback)))
        diag.solver_status = rep.status
        return u_fallback, diag

    diag.filter_active = bool(np.linalg.norm(u - np.clip(u_bar, lo, hi)) > 1e-7)
    diag.cbc_value = float(np.min(sample_cbc(u)))
    diag.solver_status = rep.status
    return u, diag


def control_step(q, u_prev, traj, cloud, env_field, sc_field, gov, params,
                 mode="dr_cbf", seed=0):
    """One controller tick: governor, PD nominal, then the selected safety filter.

    Returns (u, new governor state, FilterDiagnostics). With an empty cloud the
    barrier uses only the self-collision field.
    """
    q = np.asarray(q, dtype=float)
    m = q.size
    lo, hi = params.box(m)
    gov = governor_step(gov, q, traj, params.dt, params)
    u_bar = pd_nominal(q, u_prev, gov.reference, params)

    if mode == "pd":
        return np.clip(u_bar, lo, hi), gov, FilterDiagnostics(solver_status="pd")

    empty = cloud is None or len(cloud) == 0
    if mode == "cbf":
        if empty:
            v, gq = sc_field.evaluate(q)
            ev = BarrierEval(value=v, grad_q=gq, dhdt=0.0, argmin_source=("self", -1))
        else:
            ev = eval_barrier(env_field, sc_field, cloud, q)
        u, diag = cbf_qp(u_bar, ev, params)
        return np.clip(u, lo, hi), gov, diag

    if mode == "dr_cbf":
        if empty:
            vals, gqs = sc_field.realizations(q, params.M2, seed)
            samples = [UncertaintySample(grad_q=gqs[i], alpha_term=params.alpha_slope * vals[i], dhdt=0.0)
                       for i in range(params.M2)]
            samples.sort(key=lambda s: s.score)
            samples = samples[:min(params.N, len(samples))]
        else:
            n_candidates = len(cloud) * params.M2 + params.M2
            samples = sample_uncertainty(env_field, sc_field, cloud, q,
                                         M2=params.M2, N=min(params.N, n_candidates),
                                         alpha_slope=params.alpha_slope, seed=seed)
        u, diag = dr_cbf_qp(u_bar, samples, params)
        diag.h = samples[0].alpha_term / params.alpha_slope if params.alpha_slope else np.nan
        return np.clip(u, lo, hi), gov, diag

    raise ValueError(f"unknown control mode: {mode}")

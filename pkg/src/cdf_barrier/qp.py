"""Deterministic ADMM solver for quadratic programs with balls, boxes and linear constraints.

One solver covers both consumers: the piecewise-Bezier program (ball constraints
from bubbles) and the safety-filter QPs (linear inequalities and boxes after
infinity-norm linearization). Cost convention: 0.5 * x'Hx + g'x.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg


@dataclass
class BallConstraint:
    indices: np.ndarray   # variable indices forming the sub-vector
    center: np.ndarray
    radius: float


@dataclass
class ConvexProblem:
    H: np.ndarray
    g: np.ndarray
    A: np.ndarray | None = None     # A x = b
    b: np.ndarray | None = None
    C: np.ndarray | None = None     # C x <= d
    d: np.ndarray | None = None
    balls: list[BallConstraint] = field(default_factory=list)
    lo: np.ndarray | None = None    # box (use -inf/inf for free coordinates)
    hi: np.ndarray | None = None
    x0: np.ndarray | None = None

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        self.g = np.asarray(self.g, dtype=float)
        n = self.g.size
        if self.H.shape != (n, n):
            raise ValueError("H/g dimension mismatch")
        if not np.allclose(self.H, self.H.T, atol=1e-10):
            raise ValueError("H must be symmetric")
        for ball in self.balls:
            ball.indices = np.asarray(ball.indices, dtype=int)
            ball.center = np.asarray(ball.center, dtype=float)
            if ball.radius <= 0:
                raise ValueError("ball radius must be positive")

    @property
    def n(self) -> int:
        return self.g.size


@dataclass
class SolveReport:
    x: np.ndarray
    status: str                 # optimal | max_iter | infeasible
    primal_residual: float
    dual_residual: float
    iterations: int
    history: list = field(default_factory=list)


def project_ball(v: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    """Exact Euclidean projection onto a ball."""
    w = v - center
    nw = np.linalg.norm(w)
    if nw <= radius:
        return v.copy()
    return center + w * (radius / nw)


def _stack_constraints(p: ConvexProblem):
    n = p.n
    blocks = []
    kinds = []  # (kind, payload) aligned with row ranges
    if p.A is not None:
        A = np.atleast_2d(np.asarray(p.A, dtype=float))
        blocks.append(A)
        kinds.append(("eq", np.asarray(p.b, dtype=float).ravel()))
    if p.C is not None:
        C = np.atleast_2d(np.asarray(p.C, dtype=float))
        blocks.append(C)
        kinds.append(("ineq", np.asarray(p.d, dtype=float).ravel()))
    for ball in p.balls:
        S = np.zeros((ball.indices.size, n))
        S[np.arange(ball.indices.size), ball.indices] = 1.0
        blocks.append(S)
        kinds.append(("ball", ball))
    if p.lo is not None or p.hi is not None:
        lo = np.full(n, -np.inf) if p.lo is None else np.asarray(p.lo, dtype=float)
        hi = np.full(n, np.inf) if p.hi is None else np.asarray(p.hi, dtype=float)
        bounded = np.isfinite(lo) | np.isfinite(hi)
        if bounded.any():
            idx = np.nonzero(bounded)[0]
            S = np.zeros((idx.size, n))
            S[np.arange(idx.size), idx] = 1.0
            blocks.append(S)
            kinds.append(("box", (lo[idx], hi[idx])))
    if not blocks:
        return np.zeros((0, n)), []
    return np.concatenate(blocks, axis=0), kinds


def _project(v: np.ndarray, kinds) -> np.ndarray:
    z = np.empty_like(v)
    r = 0
    for kind, payload in kinds:
        if kind == "eq":
            k = payload.size
            z[r:r + k] = payload
        elif kind == "ineq":
            k = payload.size
            z[r:r + k] = np.minimum(v[r:r + k], payload)
        elif kind == "ball":
            k = payload.indices.size
            z[r:r + k] = project_ball(v[r:r + k], payload.center, payload.radius)
        else:  # box
            lo, hi = payload
            k = lo.size
            z[r:r + k] = np.clip(v[r:r + k], lo, hi)
        r += k
    return z


def solve(
    problem: ConvexProblem,
    tol_primal: float = 1e-6,
    tol_dual: float = 1e-6,
    max_iter: int = 20000,
    track_history: bool = False,
) -> SolveReport:
    """Operator-splitting solve; deterministic for a given problem.

    status=optimal guarantees both residuals are below their tolerances at the
    returned point. Infeasibility is declared when scaled residuals stall above
    1e2x the tolerance for 1000 iterations while the duals keep growing.
    """
    n = problem.n
    M, kinds = _stack_constraints(problem)
    x = np.zeros(n) if problem.x0 is None else np.asarray(problem.x0, dtype=float).copy()
    if M.shape[0] == 0:
        x = np.linalg.solve(problem.H + 1e-12 * np.eye(n), -problem.g)
        return SolveReport(x=x, status="optimal", primal_residual=0.0,
                           dual_residual=0.0, iterations=0)

    sigma = 1e-6
    rho_base = 1.0
    rho_row = np.ones(M.shape[0])
    r0 = 0
    for kind, payload in kinds:
        k = payload.size if kind in ("eq", "ineq") else (
            payload.indices.size if kind == "ball" else payload[0].size)
        if kind == "eq":
            rho_row[r0:r0 + k] = 1e3
        r0 += k

    def factor(rho):
        K = problem.H + sigma * np.eye(n) + (M.T * (rho * rho_row)) @ M
        return scipy.linalg.cho_factor(K, check_finite=False)

    chol = factor(rho_base)
    z = _project(M @ x, kinds)
    y = np.zeros(M.shape[0])

    best = None  # (combined, x, rp, rd, it)
    history = []
    stall_window = 1000
    stall_count = 0
    status = "max_iter"
    it = 0

    for it in range(1, max_iter + 1):
        rhs = sigma * x - problem.g + M.T @ (rho_base * rho_row * z - y)
        x = scipy.linalg.cho_solve(chol, rhs, check_finite=False)
        Mx = M @ x
        z = _project(Mx + y / (rho_base * rho_row), kinds)
        y = y + rho_base * rho_row * (Mx - z)

        r_prim = float(np.max(np.abs(Mx - z)))
        dual_vec = problem.H @ x + problem.g + M.T @ y
        r_dual = float(np.max(np.abs(dual_vec)))
        combined = max(r_prim, r_dual)

        if best is None or combined < best[0]:
            best = (combined, x.copy(), r_prim, r_dual, it)
            stall_count = 0
        else:
            stall_count += 1
        if track_history:
            history.append(best[0])

        if r_prim <= tol_primal and r_dual <= tol_dual:
            status = "optimal"
            break

        if stall_count >= stall_window and best[0] > 1e2:
            status = "infeasible"
            break

        if it % 100 == 0 and r_dual > 0 and r_prim > 0:
            ratio = r_prim / r_dual
            new_rho = rho_base
            if ratio > 10.0:
                new_rho = min(rho_base * 2.0, 1e3)
            elif ratio < 0.1:
                new_rho = max(rho_base / 2.0, 1e-3)
            if new_rho != rho_base:
                # rescale duals so y/rho stays consistent
                y *= new_rho / rho_base
                rho_base = new_rho
                chol = factor(rho_base)

    if status == "optimal":
        return SolveReport(x=x, status=status, primal_residual=r_prim,
                           dual_residual=r_dual, iterations=it, history=history)
    _, bx, brp, brd, _ = best
    return SolveReport(x=bx, status=status, primal_residual=brp,
                       dual_residual=brd, iterations=it, history=history)


def constraint_violation(problem: ConvexProblem, x: np.ndarray) -> float:
    """Max absolute violation of all constraints at x."""
    v = 0.0
    if problem.A is not None:
        v = max(v, float(np.max(np.abs(np.atleast_2d(problem.A) @ x - problem.b))))
    if problem.C is not None:
        v = max(v, float(np.max(np.maximum(np.atleast_2d(problem.C) @ x - problem.d, 0.0), initial=0.0)))
    for ball in problem.balls:
        v = max(v, max(0.0, float(np.linalg.norm(x[ball.indices] - ball.center) - ball.radius)))
    if problem.lo is not None:
        v = max(v, float(np.max(np.maximum(problem.lo - x, 0.0), initial=0.0)))
    if problem.hi is not None:
        v = max(v, float(np.max(np.maximum(x - problem.hi, 0.0), initial=0.0)))
    return v


def objective(problem: ConvexProblem, x: np.ndarray) -> float:
    return float(0.5 * x @ problem.H @ x + problem.g @ x)

"""Piecewise Bezier smoothing through a bubble chain via a convex program.

Each segment's control points are confined to its bubble (ball constraints), so
the convex hull property certifies the whole curve without re-checking; the
objective is a weighted sum of integrated squared derivatives.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from math import comb

import numpy as np

from .qp import BallConstraint, ConvexProblem, solve


class TrajectoryError(RuntimeError):
    pass


def bernstein_basis(d: int, t) -> np.ndarray:
    """Bernstein basis values, shape (len(t), d+1)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    i = np.arange(d + 1)
    co = np.array([comb(d, k) for k in i], dtype=float)
    return co * t[:, None] ** i * (1 - t[:, None]) ** (d - i)


def derivative_control_matrix(d: int, k: int) -> np.ndarray:
    """Maps control points to the k-th derivative's control points ((d-k+1) x (d+1))."""
    D = np.eye(d + 1)
    for i in range(k):
        rows = d + 1 - i
        diff = np.zeros((rows - 1, rows))
        diff[np.arange(rows - 1), np.arange(rows - 1)] = -1.0
        diff[np.arange(rows - 1), np.arange(1, rows)] = 1.0
        D = (d - i) * diff @ D
    return D


def bernstein_gram(n: int) -> np.ndarray:
    """G_ij = integral of B_i^n B_j^n over [0,1]."""
    i = np.arange(n + 1)
    ci = np.array([comb(n, k) for k in i], dtype=float)
    denom = np.array([[comb(2 * n, a + b) for b in i] for a in i], dtype=float)
    return ci[:, None] * ci[None, :] / ((2 * n + 1) * denom)


def derivative_energy_matrix(d: int, k: int) -> np.ndarray:
    """Q_k with integral of ||gamma^(k)||^2 = sum over coordinates of c'Q_k c."""
    if k < 1:
        raise ValueError("derivative order must be >= 1")
    if k > d:
        return np.zeros((d + 1, d + 1))
    D = derivative_control_matrix(d, k)
    return D.T @ bernstein_gram(d - k) @ D


@dataclass
class BezierSegment:
    points: np.ndarray  # (d+1, m)

    @property
    def degree(self) -> int:
        return self.points.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def eval(self, t) -> np.ndarray:
        B = bernstein_basis(self.degree, t)
        out = B @ self.points
        return out[0] if np.isscalar(t) else out

    def derivative(self, k: int = 1) -> "BezierSegment":
        D = derivative_control_matrix(self.degree, k)
        return BezierSegment(points=D @ self.points)

    def energy(self, k: int) -> float:
        Q = derivative_energy_matrix(self.degree, k)
        return float(np.einsum("id,ij,jd->", self.points, Q, self.points))


@dataclass
class PiecewiseBezier:
    segments: list[BezierSegment]
    bubbles: list | None = None  # owning bubble per segment (center, radius), optional

    @property
    def n_segments(self) -> int:
        return len(self.segments)

    @property
    def dim(self) -> int:
        return self.segments[0].dim

    def eval(self, s: float) -> np.ndarray:
        """Evaluate with s in [0,1] mapped uniformly over segments."""
        s = min(max(float(s), 0.0), 1.0)
        n = self.n_segments
        j = min(int(s * n), n - 1)
        t = s * n - j
        return self.segments[j].eval(t)

    def sample(self, n_samples: int = 200) -> np.ndarray:
        return np.array([self.eval(s) for s in np.linspace(0.0, 1.0, n_samples)])

    def arc_length(self, n_samples: int = 400) -> float:
        pts = self.sample(n_samples)
        return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())

    @property
    def start(self) -> np.ndarray:
        return self.segments[0].points[0]

    @property
    def end(self) -> np.ndarray:
        return self.segments[-1].points[-1]

    @classmethod
    def from_waypoints(cls, waypoints: np.ndarray) -> "PiecewiseBezier":
        """Degree-1 chain through a polyline (used to track raw planner paths)."""
        waypoints = np.asarray(waypoints, dtype=float)
        segs = [BezierSegment(points=waypoints[i:i + 2].copy())
                for i in range(len(waypoints) - 1)]
        return cls(segments=segs)

    def to_dict(self) -> dict:
        return {
            "degree": self.segments[0].degree,
            "segments": [s.points.tolist() for s in self.segments],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PiecewiseBezier":
        return cls(segments=[BezierSegment(points=np.asarray(p)) for p in d["segments"]])

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump({"version": 1, "kind": "trajectory", **self.to_dict()}, f)

    @classmethod
    def load(cls, path) -> "PiecewiseBezier":
        with open(path) as f:
            return cls.from_dict(json.load(f))


DEFAULT_WEIGHTS = {1: 0.0, 2: 1.0, 3: 0.1}


def optimize_trajectory(
    bubbles,
    q0: np.ndarray,
    qG: np.ndarray,
    weights: dict | None = None,
    degree: int = 5,
    boundary_orders=(1, 2),
    tol: float = 1e-7,
    max_iter: int = 40000,
) -> PiecewiseBezier:
    """Solve the bubble-chain smoothing program and return the piecewise curve.

    bubbles: sequence of objects with .center and .radius (one per segment, in
    path order); consecutive bubbles must overlap, q0 in the first, qG in the last.
    """
    weights = dict(DEFAULT_WEIGHTS if weights is None else weights)
    q0 = np.asarray(q0, dtype=float)
    qG = np.asarray(qG, dtype=float)
    centers = np.array([np.asarray(b.center, dtype=float) for b in bubbles])
    radii = np.array([float(b.radius) for b in bubbles])
    n_seg = len(bubbles)
    m = q0.size
    d = degree
    npts = d + 1
    nv = n_seg * npts * m

    if np.linalg.norm(q0 - centers[0]) > radii[0] + 1e-9:
        raise TrajectoryError("start configuration outside first bubble")
    if np.linalg.norm(qG - centers[-1]) > radii[-1] + 1e-9:
        raise TrajectoryError("goal configuration outside last bubble")

    def var(j, l):
        return (j * npts + l) * m

    Qtilde = sum(w * derivative_energy_matrix(d, k) for k, w in weights.items() if w)
    H = np.zeros((nv, nv))
    for j in range(n_seg):
        s = var(j, 0)
        H[s:s + npts * m, s:s + npts * m] = 2.0 * np.kron(Qtilde, np.eye(m))

    rows, rhs = [], []

    def add_rows(mat_rows, vec):
        rows.extend(mat_rows)
        rhs.extend(vec)

    def point_row(j, coeffs):
        """Row block (m x nv) combining control points of segment j with coeffs."""
        blk = np.zeros((m, nv))
        for l, c in enumerate(coeffs):
            if c != 0.0:
                s = var(j, l)
                blk[:, s:s + m] += c * np.eye(m)
        return blk

    deriv_first = {k: derivative_control_matrix(d, k)[0] for k in (1, 2)}
    deriv_last = {k: derivative_control_matrix(d, k)[-1] for k in (1, 2)}
    ident = np.zeros(npts)

    # interface continuity: position and derivative orders 1, 2
    for j in range(n_seg - 1):
        e_last = ident.copy(); e_last[-1] = 1.0
        e_first = ident.copy(); e_first[0] = 1.0
        add_rows(point_row(j, e_last) - point_row(j + 1, e_first), np.zeros(m))
        for k in (1, 2):
            add_rows(point_row(j, deriv_last[k]) - point_row(j + 1, deriv_first[k]), np.zeros(m))

    # endpoints
    e0 = ident.copy(); e0[0] = 1.0
    eN = ident.copy(); eN[-1] = 1.0
    add_rows(point_row(0, e0), q0)
    add_rows(point_row(n_seg - 1, eN), qG)
    for k in boundary_orders:
        add_rows(point_row(0, derivative_control_matrix(d, k)[0]), np.zeros(m))
        add_rows(point_row(n_seg - 1, derivative_control_matrix(d, k)[-1]), np.zeros(m))

    A = np.array(rows)
    b = np.array(rhs)

    balls = [
        BallConstraint(indices=np.arange(var(j, l), var(j, l) + m),
                       center=centers[j], radius=radii[j])
        for j in range(n_seg) for l in range(npts)
    ]

    x0 = _chord_warm_start(centers, radii, q0, qG, d, m)
    prob = ConvexProblem(H=H, g=np.zeros(nv), A=A, b=b, balls=balls, x0=x0)
    rep = solve(prob, tol_primal=tol, tol_dual=tol, max_iter=max_iter)
    from .qp import constraint_violation

    if rep.status == "infeasible" or constraint_violation(prob, rep.x) > 1e-5:
        raise TrajectoryError(
            f"trajectory program not solved (status {rep.status}, "
            f"violation {constraint_violation(prob, rep.x):.2e})")

    # exact equality polish: project onto the continuity/boundary subspace
    x = rep.x
    resid = A @ x - b
    if np.max(np.abs(resid)) > 0:
        corr = np.linalg.lstsq(A, resid, rcond=None)[0]
        x = x - corr

    segs = [BezierSegment(points=x[var(j, 0):var(j, 0) + npts * m].reshape(npts, m).copy())
            for j in range(n_seg)]
    return PiecewiseBezier(segments=segs, bubbles=[(centers[j], radii[j]) for j in range(n_seg)])


def _chord_warm_start(centers, radii, q0, qG, d, m):
    """Feasible polyline through consecutive bubble intersections, lifted to control points."""
    n_seg = len(centers)
    knots = [q0]
    for j in range(1, n_seg):
        delta = centers[j] - centers[j - 1]
        dist = np.linalg.norm(delta)
        if dist < 1e-12:
            knots.append(centers[j].copy())
            continue
        t_lo = max(dist - radii[j], 0.0)
        t_hi = min(radii[j - 1], dist)
        t = 0.5 * (t_lo + t_hi)
        knots.append(centers[j - 1] + (t / dist) * delta)
    knots.append(qG)
    x0 = np.empty(n_seg * (d + 1) * m)
    for j in range(n_seg):
        for l in range(d + 1):
            pt = knots[j] + (l / d) * (knots[j + 1] - knots[j])
            x0[(j * (d + 1) + l) * m:(j * (d + 1) + l + 1) * m] = pt
    return x0

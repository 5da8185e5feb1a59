"""Safety barrier assembled from distance fields and point clouds.

The barrier value at a configuration is the minimum of the environment field
over all cloud points and the self-collision field; its gradient and time
derivative come from the argmin branch. Uncertainty samples for the robust
filter are drawn from stochastic field realizations over the whole cloud.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .oracle import (
    UNREACHABLE_CDF,
    ContactDB,
    SelfCollisionDB,
    cdf_values,
    scdf_values,
)


@dataclass
class PointCloud:
    points: np.ndarray              # (n, 2) meters
    velocities: np.ndarray          # (n, 2) meters/second
    timestamp: float = 0.0

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.velocities is None:
            self.velocities = np.zeros_like(self.points)
        self.velocities = np.atleast_2d(np.asarray(self.velocities, dtype=float))
        if self.velocities.shape != self.points.shape:
            raise ValueError("velocities must match points")
        if not (np.all(np.isfinite(self.points)) and np.all(np.isfinite(self.velocities))):
            raise ValueError("point cloud entries must be finite")

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class BarrierEval:
    value: float
    grad_q: np.ndarray
    dhdt: float
    argmin_source: tuple  # ("env", point index) or ("self", -1)


@dataclass
class UncertaintySample:
    grad_q: np.ndarray
    alpha_term: float
    dhdt: float

    @property
    def xi(self) -> np.ndarray:
        return np.concatenate([self.grad_q, [self.alpha_term, self.dhdt]])

    @property
    def score(self) -> float:
        return self.alpha_term + self.dhdt


class EnvField(Protocol):
    def evaluate(self, points: np.ndarray, q: np.ndarray):
        """(values (n,), grad_q (n, m), grad_p (n, 2)) for one configuration."""

    def realizations(self, points: np.ndarray, q: np.ndarray, M2: int, seed: int):
        """(values (M2, n), grad_q (M2, n, m), grad_p (M2, n, 2)) stochastic passes."""


class SelfField(Protocol):
    def evaluate(self, q: np.ndarray):
        """(value, grad_q)."""

    def realizations(self, q: np.ndarray, M2: int, seed: int):
        """(values (M2,), grads (M2, m))."""


class OracleEnvField:
    """Exact contact-database CDF as a barrier field.

    Values use nearest-grid-node lookup (exactly 1-Lipschitz in q); grad_p uses
    central finite differences with one grid spacing. Points outside the grid
    are treated as unreachable (huge value, zero gradients).
    """

    def __init__(self, db: ContactDB):
        self.db = db
        self._fd_step = float(np.max(db.spacing))

    def _values_best(self, points, q):
        inb = np.all((points >= self.db.lo - 1e-9) & (points <= self.db.hi + 1e-9), axis=1)
        vals = np.full(points.shape[0], UNREACHABLE_CDF)
        best = np.full(points.shape[0], -1, dtype=int)
        if inb.any():
            v, b = cdf_values(self.db, points[inb], q)
            vals[inb] = v
            best[inb] = b
        return vals, best

    def values(self, points, q):
        vals, _ = self._values_best(np.atleast_2d(np.asarray(points, dtype=float)),
                                    np.asarray(q, dtype=float))
        return vals

    def evaluate(self, points, q):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        q = np.asarray(q, dtype=float)
        vals, best = self._values_best(points, q)
        m = self.db.arm.m
        grad_q = np.zeros((points.shape[0], m))
        ok = (best >= 0) & (vals > 1e-12) & (vals < UNREACHABLE_CDF)
        if ok.any():
            entries = self.db.configs[best[ok]]
            ks = self.db.links[best[ok]]
            diff = q[None, :] - entries
            diff[np.arange(m)[None, :] >= ks[:, None]] = 0.0
            grad_q[ok] = diff / vals[ok][:, None]
        grad_p = np.zeros((points.shape[0], 2))
        h = self._fd_step
        for axis in range(2):
            e = np.zeros(2)
            e[axis] = h
            vp, _ = self._values_best(points + e, q)
            vm, _ = self._values_best(points - e, q)
            fin = (vp < UNREACHABLE_CDF) & (vm < UNREACHABLE_CDF)
            grad_p[fin, axis] = (vp[fin] - vm[fin]) / (2 * h)
        grad_p[vals >= UNREACHABLE_CDF] = 0.0
        return vals, grad_q, grad_p

    def realizations(self, points, q, M2, seed):
        vals, gq, gp = self.evaluate(points, q)
        return (np.tile(vals, (M2, 1)),
                np.tile(gq, (M2, 1, 1)),
                np.tile(gp, (M2, 1, 1)))

    def values_batch(self, points, Q):
        """(n_points, n_configs) value table, no gradients."""
        from .oracle import cell_cdf

        points = np.atleast_2d(np.asarray(points, dtype=float))
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        out = np.full((points.shape[0], Q.shape[0]), UNREACHABLE_CDF)
        inb = np.all((points >= self.db.lo - 1e-9) & (points <= self.db.hi + 1e-9), axis=1)
        if inb.any():
            cells = self.db.cell_index(points[inb])
            for row, cell in zip(np.nonzero(inb)[0], cells):
                out[row] = cell_cdf(self.db, int(cell), Q)
        return out


class OracleSelfField:
    """Exact self-collision CDF as a barrier field (deterministic realizations)."""

    def __init__(self, db: SelfCollisionDB):
        self.db = db

    def value(self, q):
        return float(scdf_values(self.db, np.asarray(q, dtype=float))[0])

    def evaluate(self, q):
        q = np.asarray(q, dtype=float)
        if self.db.empty:
            return UNREACHABLE_CDF, np.zeros_like(q)
        joint_idx = np.arange(self.db.arm.m)[None, :]
        mask = (joint_idx >= self.db.pair_a[:, None] - 1) & (joint_idx <= self.db.pair_b[:, None] - 1)
        diff = q[None, :] - self.db.configs
        d = np.sqrt(np.einsum("nm,nm->n", diff * diff, mask.astype(float)))
        i = int(np.argmin(d))
        grad = np.zeros_like(q)
        if d[i] > 1e-12:
            grad = (mask[i] * diff[i]) / d[i]
        return float(d[i]), grad

    def realizations(self, q, M2, seed):
        v, g = self.evaluate(q)
        return np.full(M2, v), np.tile(g, (M2, 1))

    def values_batch(self, Q):
        return scdf_values(self.db, Q)


def barrier_value(env_field, sc_field, cloud: PointCloud, q: np.ndarray) -> float:
    """Barrier value only; skips all gradient work (planners query this a lot)."""
    q = np.asarray(q, dtype=float)
    if hasattr(sc_field, "value"):
        sc_val = sc_field.value(q)
    else:
        sc_val, _ = sc_field.evaluate(q)
    if len(cloud) == 0:
        return float(sc_val)
    if hasattr(env_field, "values"):
        vals = env_field.values(cloud.points, q)
    else:
        vals, _, _ = env_field.evaluate(cloud.points, q)
    return float(min(vals.min(), sc_val))


def eval_barrier(env_field, sc_field, cloud: PointCloud, q: np.ndarray) -> BarrierEval:
    """Barrier value/gradient/time-derivative at q from one batched field pass.

    Ties go to the lowest cloud point index; the self-collision term loses ties.
    dhdt is zero when the self-collision branch is active.
    """
    if len(cloud) == 0:
        raise ValueError("point cloud must be non-empty")
    q = np.asarray(q, dtype=float)
    vals, grad_q, grad_p = env_field.evaluate(cloud.points, q)
    sc_val, sc_grad = sc_field.evaluate(q)
    j = int(np.argmin(vals))
    if sc_val < vals[j]:
        return BarrierEval(value=float(sc_val), grad_q=sc_grad, dhdt=0.0,
                           argmin_source=("self", -1))
    dhdt = float(grad_p[j] @ cloud.velocities[j])
    return BarrierEval(value=float(vals[j]), grad_q=grad_q[j], dhdt=dhdt,
                       argmin_source=("env", j))


def sample_uncertainty(
    env_field,
    sc_field,
    cloud: PointCloud,
    q: np.ndarray,
    M2: int,
    N: int,
    alpha_slope: float = 1.0,
    seed: int = 0,
) -> list[UncertaintySample]:
    """Select the N most safety-critical realizations over the cloud.

    Candidates are all M1 x M2 environment realizations plus M2 self-collision
    realizations (with zero time derivative); selection minimizes
    alpha(value) + grad_p . point velocity, ties and order deterministic.
    """
    q = np.asarray(q, dtype=float)
    n_pts = len(cloud)
    cand_grad, cand_alpha, cand_dhdt = [], [], []
    if n_pts > 0:
        vals, gq, gp = env_field.realizations(cloud.points, q, M2, seed)
        dhdt = np.einsum("inj,nj->in", gp, cloud.velocities)
        cand_grad.append(gq.reshape(M2 * n_pts, -1))
        cand_alpha.append(alpha_slope * vals.reshape(-1))
        cand_dhdt.append(dhdt.reshape(-1))
    sc_vals, sc_grads = sc_field.realizations(q, M2, seed + 1)
    cand_grad.append(sc_grads)
    cand_alpha.append(alpha_slope * sc_vals)
    cand_dhdt.append(np.zeros(M2))

    grads = np.concatenate(cand_grad, axis=0)
    alphas = np.concatenate(cand_alpha)
    dhdts = np.concatenate(cand_dhdt)
    scores = alphas + dhdts
    if N > scores.size:
        raise ValueError(f"requested {N} samples from {scores.size} candidates")
    order = np.argsort(scores, kind="stable")[:N]
    return [UncertaintySample(grad_q=grads[i].copy(), alpha_term=float(alphas[i]),
                              dhdt=float(dhdts[i])) for i in order]

"""Planar m-link arm: forward kinematics, capsule geometry, workspace SDF, 2-link IK.

Joint configurations are plain numpy arrays of m radians. Link i (1-based) is a
capsule: the segment from joint i-1 to joint i inflated by ``capsule_radii[i-1]``.
Link world angles are cumulative sums of the joint angles.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class ArmModel:
    """Geometry and joint limits of a planar revolute chain with a fixed base at the origin."""

    link_lengths: np.ndarray
    capsule_radii: np.ndarray | None = None
    joint_limits_lo: np.ndarray | None = None
    joint_limits_hi: np.ndarray | None = None

    def __post_init__(self):
        self.link_lengths = np.asarray(self.link_lengths, dtype=float)
        if self.link_lengths.ndim != 1 or self.link_lengths.size < 1:
            raise ValueError("link_lengths must be a non-empty 1-D sequence")
        if np.any(self.link_lengths <= 0):
            raise ValueError("link lengths must be positive")
        m = self.link_lengths.size
        if self.capsule_radii is None:
            self.capsule_radii = np.zeros(m)
        self.capsule_radii = np.asarray(self.capsule_radii, dtype=float)
        if self.capsule_radii.shape != (m,) or np.any(self.capsule_radii < 0):
            raise ValueError("capsule_radii must be m non-negative values")
        if self.joint_limits_lo is None:
            self.joint_limits_lo = np.full(m, -np.pi)
        if self.joint_limits_hi is None:
            self.joint_limits_hi = np.full(m, np.pi)
        self.joint_limits_lo = np.asarray(self.joint_limits_lo, dtype=float)
        self.joint_limits_hi = np.asarray(self.joint_limits_hi, dtype=float)
        if self.joint_limits_lo.shape != (m,) or self.joint_limits_hi.shape != (m,):
            raise ValueError("joint limits must have m entries")
        if np.any(self.joint_limits_lo >= self.joint_limits_hi):
            raise ValueError("joint_limits_lo must be strictly below joint_limits_hi")

    @property
    def m(self) -> int:
        return self.link_lengths.size

    @property
    def reach(self) -> float:
        return float(self.link_lengths.sum())

    def to_dict(self) -> dict:
        return {
            "link_lengths": self.link_lengths.tolist(),
            "capsule_radii": self.capsule_radii.tolist(),
            "joint_limits_lo": self.joint_limits_lo.tolist(),
            "joint_limits_hi": self.joint_limits_hi.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArmModel":
        return cls(
            link_lengths=d["link_lengths"],
            capsule_radii=d.get("capsule_radii"),
            joint_limits_lo=d.get("joint_limits_lo"),
            joint_limits_hi=d.get("joint_limits_hi"),
        )

    def geometry_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


def two_link_arm(l1: float = 2.0, l2: float = 2.0, radius: float = 0.0) -> ArmModel:
    """The 2-DoF arm used throughout the experiments: two links, base at the origin."""
    return ArmModel(link_lengths=[l1, l2], capsule_radii=[radius, radius])


def forward_kinematics(arm: ArmModel, q: np.ndarray) -> np.ndarray:
    """Joint positions (m+1, 2); row 0 is the base, row m the end-effector."""
    q = np.asarray(q, dtype=float)
    if q.shape != (arm.m,):
        raise ValueError(f"expected {arm.m} joint angles, got shape {q.shape}")
    angles = np.cumsum(q)
    steps = arm.link_lengths[:, None] * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    pts = np.zeros((arm.m + 1, 2))
    pts[1:] = np.cumsum(steps, axis=0)
    return pts


def fk_batch(arm: ArmModel, Q: np.ndarray) -> np.ndarray:
    """Joint positions for a batch of configurations: (n, m+1, 2)."""
    Q = np.asarray(Q, dtype=float)
    angles = np.cumsum(Q, axis=1)
    steps = arm.link_lengths[None, :, None] * np.stack(
        [np.cos(angles), np.sin(angles)], axis=2
    )
    pts = np.zeros((Q.shape[0], arm.m + 1, 2))
    pts[:, 1:] = np.cumsum(steps, axis=1)
    return pts


def point_segment_distance(p, a, b):
    """Distance from point(s) p to segment(s) [a, b]; broadcasts over leading axes."""
    p = np.asarray(p, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ab = b - a
    denom = np.maximum(np.einsum("...i,...i->...", ab, ab), 1e-300)
    t = np.clip(np.einsum("...i,...i->...", p - a, ab) / denom, 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.linalg.norm(p - closest, axis=-1)


def link_distances(arm: ArmModel, p: np.ndarray, joints: np.ndarray) -> np.ndarray:
    """Per-link capsule distances from p; joints is (..., m+1, 2), result (..., m)."""
    a = joints[..., :-1, :]
    b = joints[..., 1:, :]
    d = point_segment_distance(np.asarray(p, dtype=float)[..., None, :], a, b)
    return d - arm.capsule_radii


def arm_sdf(arm: ArmModel, p: np.ndarray, q: np.ndarray) -> float:
    """Signed workspace distance from p to the arm body at q (negative inside)."""
    joints = forward_kinematics(arm, q)
    return float(link_distances(arm, p, joints).min())


def arm_sdf_points(arm: ArmModel, points: np.ndarray, q: np.ndarray) -> np.ndarray:
    """arm_sdf for a batch of workspace points against one configuration."""
    joints = forward_kinematics(arm, q)
    points = np.asarray(points, dtype=float)
    d = np.stack(
        [
            point_segment_distance(points, joints[i], joints[i + 1]) - arm.capsule_radii[i]
            for i in range(arm.m)
        ],
        axis=1,
    )
    return d.min(axis=1)


def inverse_kinematics_2link(arm: ArmModel, target: np.ndarray) -> list[np.ndarray]:
    """Elbow-up/down solutions placing the end-effector at target; [] if unreachable.

    Solutions outside the joint limits are dropped; coincident solutions (straight
    arm) are returned once.
    """
    if arm.m != 2:
        raise ValueError("analytic IK requires a 2-link arm")
    target = np.asarray(target, dtype=float)
    l1, l2 = arm.link_lengths
    r2 = float(target @ target)
    c2 = (r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
    if abs(c2) > 1.0 + 1e-12:
        return []
    c2 = min(1.0, max(-1.0, c2))
    base = math.atan2(target[1], target[0])
    sols = []
    for sign in (1.0, -1.0):
        q2 = sign * math.acos(c2)
        q1 = base - math.atan2(l2 * math.sin(q2), l1 + l2 * math.cos(q2))
        q1 = (q1 + math.pi) % (2.0 * math.pi) - math.pi
        q = np.array([q1, q2])
        if np.any(q < arm.joint_limits_lo - 1e-12) or np.any(q > arm.joint_limits_hi + 1e-12):
            continue
        if any(np.linalg.norm(q - s) < 1e-12 for s in sols):
            continue
        sols.append(q)
    return sols


def segment_segment_distance(a0, a1, b0, b1):
    """Min distance between 2-D segments [a0,a1] and [b0,b1]; broadcasts leading axes."""
    a0 = np.asarray(a0, dtype=float)
    a1 = np.asarray(a1, dtype=float)
    b0 = np.asarray(b0, dtype=float)
    b1 = np.asarray(b1, dtype=float)

    d1 = a1 - a0
    d2 = b1 - b0
    r = a0 - b0
    a = np.einsum("...i,...i->...", d1, d1)
    e = np.einsum("...i,...i->...", d2, d2)
    f = np.einsum("...i,...i->...", d2, r)
    c = np.einsum("...i,...i->...", d1, r)
    b = np.einsum("...i,...i->...", d1, d2)
    denom = np.maximum(a * e - b * b, 0.0)

    # clamped closest parameters (standard segment-segment recipe)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > 1e-14, np.clip((b * f - c * e) / np.where(denom > 1e-14, denom, 1.0), 0.0, 1.0), 0.0)
        t = np.where(e > 1e-14, (b * s + f) / np.where(e > 1e-14, e, 1.0), 0.0)
        t_cl = np.clip(t, 0.0, 1.0)
        s = np.where(
            (t != t_cl),
            np.clip(np.where(a > 1e-14, (b * t_cl - c) / np.where(a > 1e-14, a, 1.0), 0.0), 0.0, 1.0),
            s,
        )
    p1 = a0 + s[..., None] * d1
    p2 = b0 + t_cl[..., None] * d2
    d = np.linalg.norm(p1 - p2, axis=-1)

    # segment-segment can still intersect with positive reported distance only if the
    # clamped recipe missed a crossing; crossings are caught because the closest
    # points coincide there. Exact parallel overlap is handled by the clamping.
    return d


def _trimmed_segments(joints, i, j, lengths):
    """Segments of links i and j (1-based) trimmed near a shared joint, if adjacent."""
    a0, a1 = joints[..., i - 1, :], joints[..., i, :]
    b0, b1 = joints[..., j - 1, :], joints[..., j, :]
    if j == i + 1:
        trim = 0.5 * min(lengths[i - 1], lengths[j - 1])
        fa = trim / lengths[i - 1]
        fb = trim / lengths[j - 1]
        a1 = a1 + fa * (a0 - a1)  # pull link i away from the shared joint
        b0 = b0 + fb * (b1 - b0)  # pull link j away from the shared joint
    return a0, a1, b0, b1


def self_collision_pairs(arm: ArmModel):
    """Link index pairs (1-based, i<j) that participate in self-collision checks."""
    return [(i, j) for i in range(1, arm.m + 1) for j in range(i + 1, arm.m + 1)]


def self_collision_batch(arm: ArmModel, Q: np.ndarray, overlap_tol: float = 0.02):
    """Detect self-collisions for a batch of configurations.

    Adjacent links are checked with their shared-joint neighborhood trimmed off, so
    only genuine fold-backs count. Returns (mask, a, b): colliding flag and the
    closest colliding pair per configuration (1-based; 0 where no collision).
    """
    Q = np.asarray(Q, dtype=float)
    n = Q.shape[0]
    pairs = self_collision_pairs(arm)
    if not pairs:
        return np.zeros(n, dtype=bool), np.zeros(n, dtype=int), np.zeros(n, dtype=int)
    joints = fk_batch(arm, Q)
    best = np.full(n, np.inf)
    best_a = np.zeros(n, dtype=int)
    best_b = np.zeros(n, dtype=int)
    hit = np.zeros(n, dtype=bool)
    for (i, j) in pairs:
        a0, a1, b0, b1 = _trimmed_segments(joints, i, j, arm.link_lengths)
        d = segment_segment_distance(a0, a1, b0, b1)
        rsum = arm.capsule_radii[i - 1] + arm.capsule_radii[j - 1]
        thresh = rsum if rsum > 0 else overlap_tol
        margin = d - thresh
        colliding = margin < 0
        closer = colliding & (margin < best)
        best = np.where(closer, margin, best)
        best_a = np.where(closer, i, best_a)
        best_b = np.where(closer, j, best_b)
        hit |= colliding
    return hit, best_a, best_b


def self_collides(arm: ArmModel, q: np.ndarray, overlap_tol: float = 0.02) -> bool:
    mask, _, _ = self_collision_batch(arm, np.asarray(q, dtype=float)[None, :], overlap_tol)
    return bool(mask[0])

"""Ground-truth configuration distance fields from exhaustive contact search.

The environment CDF is backed by a workspace-grid contact database: for every
grid point, configurations that put the arm in contact with it, found by
scanning a configuration lattice and refining near-zero / sign-change edges.
The self-collision CDF is backed by uniformly sampled self-colliding
configurations. Both serve as training-data generators and as the verification
oracle for safety claims; queries are exactly 1-Lipschitz in q by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .kinematics import ArmModel, fk_batch, link_distances, self_collision_batch

UNREACHABLE_CDF = 1e9
GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass
class ContactDB:
    """Per-grid-point contact configurations with their contact link, CSR-packed."""

    arm: ArmModel
    lo: np.ndarray            # workspace lower corner (2,)
    hi: np.ndarray            # workspace upper corner (2,)
    shape: tuple[int, int]    # grid nodes per axis
    S: int
    contact_tol: float
    offsets: np.ndarray       # (n_cells + 1,) int
    configs: np.ndarray       # (total, m)
    links: np.ndarray         # (total,) int, 1-based contact link
    db_tol: float = 0.0       # max farthest-point-sampling covering radius

    @property
    def spacing(self) -> np.ndarray:
        return (self.hi - self.lo) / (np.array(self.shape) - 1)

    @property
    def n_cells(self) -> int:
        return self.shape[0] * self.shape[1]

    def grid_points(self) -> np.ndarray:
        xs = np.linspace(self.lo[0], self.hi[0], self.shape[0])
        ys = np.linspace(self.lo[1], self.hi[1], self.shape[1])
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return np.stack([gx.ravel(), gy.ravel()], axis=1)

    def cell_index(self, points: np.ndarray) -> np.ndarray:
        """Nearest grid node for each point; raises if any point is out of bounds."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if np.any(points < self.lo - 1e-9) or np.any(points > self.hi + 1e-9):
            raise ValueError("point outside workspace grid bounds")
        idx = np.rint((points - self.lo) / self.spacing).astype(int)
        idx = np.clip(idx, 0, np.array(self.shape) - 1)
        return idx[:, 0] * self.shape[1] + idx[:, 1]

    def reachable_cells(self) -> np.ndarray:
        counts = np.diff(self.offsets)
        return np.nonzero(counts > 0)[0]


def _prefix_distances(Q_entries: np.ndarray, links: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Distance over the joint prefix q_{1..k} per entry, k = contact link."""
    diff = q[None, :] - Q_entries
    mask = np.arange(q.size)[None, :] < links[:, None]
    return np.sqrt(np.sum(mask * diff * diff, axis=1))


def cell_cdf(db: ContactDB, cell: int, Q: np.ndarray) -> np.ndarray:
    """Exact CDF of one grid cell against a batch of configurations."""
    s, e = db.offsets[cell], db.offsets[cell + 1]
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if e == s:
        return np.full(Q.shape[0], UNREACHABLE_CDF)
    entries = db.configs[s:e]
    ks = db.links[s:e]
    diff = Q[:, None, :] - entries[None, :, :]
    mask = (np.arange(db.arm.m)[None, None, :] < ks[None, :, None])
    d = np.sqrt(np.sum(mask * diff * diff, axis=2))
    return d.min(axis=1)


def exact_cdf(db: ContactDB, p: np.ndarray, q: np.ndarray) -> float:
    """Min joint-space distance (radians) from q to contact with the grid point nearest p."""
    vals, _ = cdf_values(db, np.asarray(p, dtype=float)[None, :], np.asarray(q, dtype=float))
    return float(vals[0])


def cdf_values(db: ContactDB, points: np.ndarray, q: np.ndarray):
    """Exact CDF for each workspace point against one configuration.

    Returns (values, entry_idx) where entry_idx indexes the flat entry arrays at
    the per-point argmin (-1 for unreachable points).
    """
    q = np.asarray(q, dtype=float)
    cells = db.cell_index(points)
    starts = db.offsets[cells]
    ends = db.offsets[cells + 1]
    counts = ends - starts
    n = cells.size
    total = int(counts.sum())
    vals = np.full(n, UNREACHABLE_CDF)
    best = np.full(n, -1, dtype=int)
    if total == 0:
        return vals, best
    # gather CSR rows for all points at once
    row_entry = _ranges(starts, ends)
    d = _prefix_distances(db.configs[row_entry], db.links[row_entry], q)
    seg_starts = np.concatenate([[0], np.cumsum(counts)])[:-1]
    nonempty = counts > 0
    ne_starts = seg_starts[nonempty]
    mins = np.minimum.reduceat(d, ne_starts)
    arg_rows = np.minimum.reduceat(np.where(d <= np.repeat(mins, counts[nonempty]), np.arange(d.size), d.size), ne_starts)
    vals[nonempty] = mins
    best[nonempty] = row_entry[arg_rows]
    return vals, best


def _ranges(starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    """Concatenation of arange(starts[i], ends[i]) without a Python loop."""
    counts = ends - starts
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, dtype=int)
    out = np.ones(total, dtype=int)
    seg = np.concatenate([[0], np.cumsum(counts)])[:-1]
    nonempty = counts > 0
    starts_ne = starts[nonempty]
    seg_ne = seg[nonempty]
    out[seg_ne[0]] = starts_ne[0]
    if starts_ne.size > 1:
        out[seg_ne[1:]] += starts_ne[1:] - ends[nonempty][:-1]
    return np.cumsum(out)


def cdf_value_grad(db: ContactDB, p: np.ndarray, q: np.ndarray):
    """Exact CDF value and its analytic gradient w.r.t. q at the argmin entry."""
    q = np.asarray(q, dtype=float)
    vals, best = cdf_values(db, np.asarray(p, dtype=float)[None, :], q)
    grad = np.zeros_like(q)
    if best[0] >= 0 and vals[0] > 1e-12 and vals[0] < UNREACHABLE_CDF:
        k = db.links[best[0]]
        diff = q - db.configs[best[0]]
        diff[k:] = 0.0
        grad = diff / vals[0]
    return float(vals[0]), grad


def build_contact_db(
    arm: ArmModel,
    workspace_bounds=((-5.0, -5.0), (5.0, 5.0)),
    grid_res: int = 40,
    cfg_res: int = 200,
    S: int = 200,
    contact_tol: float = 1e-4,
) -> ContactDB:
    """Scan a configuration lattice per workspace grid point and keep S diverse contacts.

    Candidate lattice edges (sign change or near-zero endpoint) are refined by
    golden-section search on |sdf| along the edge down to |sdf| <= contact_tol;
    surviving contacts are thinned by farthest-point sampling in joint space.
    """
    if grid_res < 2 or cfg_res < 16:
        raise ValueError("grid_res >= 2 and cfg_res >= 16 required")
    lo = np.asarray(workspace_bounds[0], dtype=float)
    hi = np.asarray(workspace_bounds[1], dtype=float)
    m = arm.m

    axes = [np.linspace(arm.joint_limits_lo[j], arm.joint_limits_hi[j], cfg_res) for j in range(m)]
    mesh = np.meshgrid(*axes, indexing="ij")
    lattice = np.stack([g.ravel() for g in mesh], axis=1)
    joints = fk_batch(arm, lattice)
    seg_a = joints[:, :-1, :]
    seg_b = joints[:, 1:, :]
    lip = arm.reach
    spacings = np.array([ax[1] - ax[0] for ax in axes])

    xs = np.linspace(lo[0], hi[0], grid_res)
    ys = np.linspace(lo[1], hi[1], grid_res)

    all_configs, all_links, offsets = [], [], [0]
    db_tol = 0.0
    lattice_shape = (cfg_res,) * m

    for ix in range(grid_res):
        for iy in range(grid_res):
            p = np.array([xs[ix], ys[iy]])
            tip = _tip_contacts(arm, p)
            dist_links = _point_link_distances(p, seg_a, seg_b, arm.capsule_radii)
            sdf = dist_links.min(axis=1)
            if tip.shape[0] == 0 and sdf.min() > lip * spacings.max() + contact_tol:
                offsets.append(offsets[-1])  # unreachable for sure
                continue
            qa, qb = _candidate_edges(sdf.reshape(lattice_shape), axes, lip, spacings, contact_tol)
            q_contact = _refine_candidates(arm, p, qa, qb, contact_tol) if qa.shape[0] else np.zeros((0, m))
            q_contact = np.concatenate([q_contact, tip], axis=0)
            if q_contact.shape[0] == 0:
                offsets.append(offsets[-1])
                continue
            q_contact = np.unique(np.round(q_contact, 6), axis=0)
            links = _contact_links(arm, p, q_contact)
            keep, cover = _farthest_point_sample(q_contact, S)
            db_tol = max(db_tol, cover)
            all_configs.append(q_contact[keep])
            all_links.append(links[keep])
            offsets.append(offsets[-1] + keep.size)

    configs = np.concatenate(all_configs, axis=0) if all_configs else np.zeros((0, m))
    links = np.concatenate(all_links, axis=0) if all_links else np.zeros(0, dtype=int)
    return ContactDB(
        arm=arm, lo=lo, hi=hi, shape=(grid_res, grid_res), S=S,
        contact_tol=contact_tol, offsets=np.asarray(offsets), configs=configs,
        links=links.astype(int), db_tol=float(db_tol),
    )


def _tip_contacts(arm: ArmModel, p: np.ndarray) -> np.ndarray:
    """Exact end-effector contacts; covers the degenerate boundary-of-reach case
    where the contact set is an isolated configuration no lattice edge crosses."""
    if arm.m != 2 or arm.capsule_radii[-1] > 0:
        return np.zeros((0, arm.m))
    from .kinematics import inverse_kinematics_2link

    sols = inverse_kinematics_2link(arm, p)
    return np.asarray(sols).reshape(-1, arm.m) if sols else np.zeros((0, arm.m))


def _point_link_distances(p, seg_a, seg_b, radii):
    ab = seg_b - seg_a
    denom = np.maximum(np.einsum("nli,nli->nl", ab, ab), 1e-300)
    t = np.clip(np.einsum("nli,nli->nl", p[None, None, :] - seg_a, ab) / denom, 0.0, 1.0)
    closest = seg_a + t[..., None] * ab
    return np.linalg.norm(p[None, None, :] - closest, axis=2) - radii[None, :]


def _candidate_edges(V, axes, lip, spacings, contact_tol):
    """Lattice edges whose endpoints allow a zero of the SDF inside the edge."""
    m = V.ndim
    qa_list, qb_list = [], []
    for axis in range(m):
        Va = np.moveaxis(V, axis, 0)[:-1]
        Vb = np.moveaxis(V, axis, 0)[1:]
        cand = (np.sign(Va) != np.sign(Vb)) | (
            np.minimum(np.abs(Va), np.abs(Vb)) <= lip * spacings[axis] + contact_tol
        )
        idx = np.nonzero(cand)
        if idx[0].size == 0:
            continue
        coords = list(idx)
        qa = np.empty((idx[0].size, m))
        qb = np.empty((idx[0].size, m))
        order = [axis] + [d for d in range(m) if d != axis]
        for pos, d in enumerate(order):
            qa[:, d] = axes[d][coords[pos]]
            qb[:, d] = axes[d][coords[pos] + (1 if pos == 0 else 0)]
        qa_list.append(qa)
        qb_list.append(qb)
    if not qa_list:
        return np.zeros((0, m)), np.zeros((0, m))
    return np.concatenate(qa_list), np.concatenate(qb_list)


def _refine_candidates(arm, p, qa, qb, contact_tol, iters=40):
    """Vectorized golden-section minimization of |sdf| along candidate edges."""

    def f(T):
        Q = qa + T[:, None] * (qb - qa)
        joints = fk_batch(arm, Q)
        return np.abs(link_distances(arm, p, joints).min(axis=1))

    a = np.zeros(qa.shape[0])
    b = np.ones(qa.shape[0])
    x1 = b - GOLDEN * (b - a)
    x2 = a + GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(iters):
        left = f1 < f2
        b = np.where(left, x2, b)
        a = np.where(left, a, x1)
        x1 = b - GOLDEN * (b - a)
        x2 = a + GOLDEN * (b - a)
        # one interior point is inherited, the other is fresh
        fresh = f(np.where(left, x1, x2))
        f1, f2 = np.where(left, fresh, f2), np.where(left, f1, fresh)
    t = np.where(f1 < f2, x1, x2)
    fv = np.minimum(f1, f2)
    ok = fv <= contact_tol
    return qa[ok] + t[ok, None] * (qb[ok] - qa[ok])


def _contact_links(arm, p, Q):
    joints = fk_batch(arm, Q)
    d = link_distances(arm, p, joints)
    return d.argmin(axis=1) + 1


def _farthest_point_sample(X: np.ndarray, S: int):
    """Greedy FPS from index 0; returns (kept indices, covering radius of the rest)."""
    n = X.shape[0]
    if n <= S:
        return np.arange(n), 0.0
    keep = np.empty(S, dtype=int)
    keep[0] = 0
    d = np.linalg.norm(X - X[0], axis=1)
    for i in range(1, S):
        keep[i] = int(np.argmax(d))
        d = np.minimum(d, np.linalg.norm(X - X[keep[i]], axis=1))
    return keep, float(d.max())


# ---------------------------------------------------------------------------
# self-collision database


@dataclass
class SelfCollisionDB:
    arm: ArmModel
    configs: np.ndarray   # (n, m)
    pair_a: np.ndarray    # (n,) 1-based lower link index
    pair_b: np.ndarray    # (n,) 1-based upper link index
    overlap_tol: float
    seed: int

    @property
    def empty(self) -> bool:
        return self.configs.shape[0] == 0


def build_selfcollision_db(
    arm: ArmModel, n_samples: int, seed: int = 0, overlap_tol: float = 0.02
) -> SelfCollisionDB:
    """Uniformly sample the joint box and keep configurations with link-link overlap."""
    if n_samples < 1:
        raise ValueError("n_samples >= 1 required")
    rng = np.random.default_rng(seed)
    kept_cfg, kept_a, kept_b = [], [], []
    batch = 100_000
    remaining = n_samples
    while remaining > 0:
        nb = min(batch, remaining)
        remaining -= nb
        Q = rng.uniform(arm.joint_limits_lo, arm.joint_limits_hi, size=(nb, arm.m))
        mask, a, b = self_collision_batch(arm, Q, overlap_tol)
        if mask.any():
            kept_cfg.append(Q[mask])
            kept_a.append(a[mask])
            kept_b.append(b[mask])
    if kept_cfg:
        configs = np.concatenate(kept_cfg)
        pa = np.concatenate(kept_a)
        pb = np.concatenate(kept_b)
    else:
        configs = np.zeros((0, arm.m))
        pa = pb = np.zeros(0, dtype=int)
    return SelfCollisionDB(arm=arm, configs=configs, pair_a=pa, pair_b=pb,
                           overlap_tol=overlap_tol, seed=seed)


def scdf_values(db: SelfCollisionDB, Q: np.ndarray) -> np.ndarray:
    """Self-collision CDF for a batch of configurations (sentinel when DB empty)."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if db.empty:
        return np.full(Q.shape[0], UNREACHABLE_CDF)
    joint_idx = np.arange(db.arm.m)[None, :]
    mask = (joint_idx >= db.pair_a[:, None] - 1) & (joint_idx <= db.pair_b[:, None] - 1)
    diff = Q[:, None, :] - db.configs[None, :, :]
    d = np.sqrt(np.einsum("bnm,nm->bn", diff * diff, mask.astype(float)))
    return d.min(axis=1)


def exact_scdf(db: SelfCollisionDB, q: np.ndarray) -> float:
    return float(scdf_values(db, q)[0])


def scdf_value_grad(db: SelfCollisionDB, q: np.ndarray):
    """SCDF value and analytic gradient w.r.t. q at the argmin stored configuration."""
    q = np.asarray(q, dtype=float)
    if db.empty:
        return UNREACHABLE_CDF, np.zeros_like(q)
    joint_idx = np.arange(db.arm.m)[None, :]
    mask = (joint_idx >= db.pair_a[:, None] - 1) & (joint_idx <= db.pair_b[:, None] - 1)
    diff = q[None, :] - db.configs
    d = np.sqrt(np.einsum("nm,nm->n", diff * diff, mask.astype(float)))
    i = int(np.argmin(d))
    grad = np.zeros_like(q)
    if d[i] > 1e-12:
        grad = (mask[i] * diff[i]) / d[i]
    return float(d[i]), grad


# ---------------------------------------------------------------------------
# persistence


def save_contact_db(db: ContactDB, path) -> None:
    payload = {
        "version": 1,
        "kind": "contact_db",
        "arm": db.arm.to_dict(),
        "arm_hash": db.arm.geometry_hash(),
        "lo": db.lo.tolist(),
        "hi": db.hi.tolist(),
        "shape": list(db.shape),
        "S": db.S,
        "contact_tol": db.contact_tol,
        "db_tol": db.db_tol,
        "offsets": db.offsets.tolist(),
        "configs": db.configs.ravel().tolist(),
        "links": db.links.tolist(),
    }
    with open(path, "w") as f:
        json.dump(payload, f)


def load_contact_db(path) -> ContactDB:
    with open(path) as f:
        d = json.load(f)
    if d.get("kind") != "contact_db" or d.get("version") != 1:
        raise ValueError("not a version-1 contact_db file")
    arm = ArmModel.from_dict(d["arm"])
    configs = np.asarray(d["configs"], dtype=float).reshape(-1, arm.m)
    return ContactDB(
        arm=arm, lo=np.asarray(d["lo"]), hi=np.asarray(d["hi"]),
        shape=tuple(d["shape"]), S=d["S"], contact_tol=d["contact_tol"],
        offsets=np.asarray(d["offsets"], dtype=int), configs=configs,
        links=np.asarray(d["links"], dtype=int), db_tol=d["db_tol"],
    )


def save_selfcollision_db(db: SelfCollisionDB, path) -> None:
    payload = {
        "version": 1,
        "kind": "selfcollision_db",
        "arm": db.arm.to_dict(),
        "arm_hash": db.arm.geometry_hash(),
        "overlap_tol": db.overlap_tol,
        "seed": db.seed,
        "configs": db.configs.ravel().tolist(),
        "pair_a": db.pair_a.tolist(),
        "pair_b": db.pair_b.tolist(),
    }
    with open(path, "w") as f:
        json.dump(payload, f)


def load_selfcollision_db(path) -> SelfCollisionDB:
    with open(path) as f:
        d = json.load(f)
    if d.get("kind") != "selfcollision_db" or d.get("version") != 1:
        raise ValueError("not a version-1 selfcollision_db file")
    arm = ArmModel.from_dict(d["arm"])
    return SelfCollisionDB(
        arm=arm,
        configs=np.asarray(d["configs"], dtype=float).reshape(-1, arm.m),
        pair_a=np.asarray(d["pair_a"], dtype=int),
        pair_b=np.asarray(d["pair_b"], dtype=int),
        overlap_tol=d["overlap_tol"],
        seed=d["seed"],
    )

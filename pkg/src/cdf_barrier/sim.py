"""Deterministic 2-D world: moving disk obstacles, noisy boundary sensing,
closed-loop episodes, randomized scenario generation, and benchmark tables.

Collision verdicts always come from exact geometry against the true obstacle
disks and the true self-collision test; learned models never adjudicate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .barrier import OracleEnvField, OracleSelfField, PointCloud, barrier_value, eval_barrier
from .bezier import PiecewiseBezier
from .control import ControlParams, control_step, init_governor
from .kinematics import (
    ArmModel,
    arm_sdf_points,
    forward_kinematics,
    inverse_kinematics_2link,
    self_collision_batch,
)
from .oracle import ContactDB, SelfCollisionDB
from .planner import PlannerParams, RrtParams, cdf_rrt, plan_bubble_trajectory


@dataclass
class Obstacle:
    center: np.ndarray
    radius: float
    velocity: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)


@dataclass
class SensorSpec:
    n_points: int = 100
    noise_sigma: float = 0.01
    velocity_noise_sigma: float = 0.02
    nominal_speed: float | None = 0.5  # reported speed magnitude; None reports truth


@dataclass
class Scenario:
    arm: ArmModel
    obstacles: list[Obstacle]
    q0: np.ndarray
    goal_target: np.ndarray | None = None
    goal_configs: list | None = None
    sensor: SensorSpec = field(default_factory=SensorSpec)
    duration: float = 40.0
    seed: int = 0
    bounds_lo: np.ndarray = field(default_factory=lambda: np.array([-5.0, -5.0]))
    bounds_hi: np.ndarray = field(default_factory=lambda: np.array([5.0, 5.0]))

    def __post_init__(self):
        self.q0 = np.asarray(self.q0, dtype=float)
        self.bounds_lo = np.asarray(self.bounds_lo, dtype=float)
        self.bounds_hi = np.asarray(self.bounds_hi, dtype=float)
        if self.goal_target is not None:
            self.goal_target = np.asarray(self.goal_target, dtype=float)

    def goals(self) -> list[np.ndarray]:
        if self.goal_configs is not None:
            return [np.asarray(g, dtype=float) for g in self.goal_configs]
        return inverse_kinematics_2link(self.arm, self.goal_target)

    def to_dict(self) -> dict:
        return {
            "arm": self.arm.to_dict(),
            "obstacles": [
                {"center": o.center.tolist(), "radius": o.radius, "velocity": o.velocity.tolist()}
                for o in self.obstacles
            ],
            "q0": self.q0.tolist(),
            "goal_target": None if self.goal_target is None else self.goal_target.tolist(),
            "goal_configs": None if self.goal_configs is None else [np.asarray(g).tolist() for g in self.goal_configs],
            "sensor": vars(self.sensor).copy(),
            "duration": self.duration,
            "seed": self.seed,
            "bounds_lo": self.bounds_lo.tolist(),
            "bounds_hi": self.bounds_hi.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        return cls(
            arm=ArmModel.from_dict(d["arm"]),
            obstacles=[Obstacle(**o) for o in d["obstacles"]],
            q0=d["q0"],
            goal_target=d.get("goal_target"),
            goal_configs=d.get("goal_configs"),
            sensor=SensorSpec(**d.get("sensor", {})),
            duration=d.get("duration", 40.0),
            seed=d.get("seed", 0),
            bounds_lo=d.get("bounds_lo", [-5.0, -5.0]),
            bounds_hi=d.get("bounds_hi", [5.0, 5.0]),
        )


def _fold_coordinate(c0, v, t, lo, hi):
    """Position and velocity of a bouncing coordinate at time t."""
    if hi <= lo or v == 0.0:
        return np.clip(c0, lo, hi), 0.0
    L = hi - lo
    phase = (c0 - lo + v * t) % (2 * L)
    if phase <= L:
        return lo + phase, v
    return lo + 2 * L - phase, -v


def obstacles_at(scenario: Scenario, t: float) -> list[Obstacle]:
    """Obstacle states at time t: constant speed with reflection off the walls."""
    out = []
    for o in scenario.obstacles:
        c = np.empty(2)
        v = np.empty(2)
        for ax in range(2):
            lo = scenario.bounds_lo[ax] + o.radius
            hi = scenario.bounds_hi[ax] - o.radius
            c[ax], v[ax] = _fold_coordinate(o.center[ax], o.velocity[ax], t, lo, hi)
        out.append(Obstacle(center=c, radius=o.radius, velocity=v))
    return out


def sense(scenario: Scenario, t: float, seed: int | None = None) -> PointCloud:
    """Noisy boundary samples of every obstacle at time t, deterministic per (seed, t)."""
    seed = scenario.seed if seed is None else seed
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0x7FFFFFFF, int(round(t * 1e6)) & 0x7FFFFFFF]))
    obs = obstacles_at(scenario, t)
    spec = scenario.sensor
    if not obs:
        return PointCloud(points=np.zeros((0, 2)), velocities=np.zeros((0, 2)), timestamp=t)
    counts = np.full(len(obs), spec.n_points // len(obs))
    counts[: spec.n_points - counts.sum()] += 1
    pts, vels = [], []
    for o, n in zip(obs, counts):
        ang = rng.uniform(0.0, 2 * np.pi, size=n)
        boundary = o.center + o.radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        boundary = boundary + rng.normal(scale=spec.noise_sigma, size=(n, 2))
        speed = np.linalg.norm(o.velocity)
        if speed < 1e-12:
            v = np.zeros(2)
        elif spec.nominal_speed is None:
            v = o.velocity
        else:
            v = spec.nominal_speed * o.velocity / speed
        vel = np.tile(v, (n, 1)) + rng.normal(scale=spec.velocity_noise_sigma, size=(n, 2))
        pts.append(boundary)
        vels.append(vel)
    return PointCloud(points=np.concatenate(pts), velocities=np.concatenate(vels), timestamp=t)


def self_clearance(arm: ArmModel, q: np.ndarray, overlap_tol: float = 0.02) -> float:
    """Positive margin to the self-collision detection threshold (inf for 1 link)."""
    from .kinematics import _trimmed_segments, fk_batch, segment_segment_distance, self_collision_pairs

    pairs = self_collision_pairs(arm)
    if not pairs:
        return np.inf
    joints = fk_batch(arm, np.asarray(q, dtype=float)[None, :])
    best = np.inf
    for (i, j) in pairs:
        a0, a1, b0, b1 = _trimmed_segments(joints, i, j, arm.link_lengths)
        d = float(segment_segment_distance(a0, a1, b0, b1)[0])
        rsum = arm.capsule_radii[i - 1] + arm.capsule_radii[j - 1]
        thresh = rsum if rsum > 0 else overlap_tol
        best = min(best, d - thresh)
    return best


def oracle_margin(arm: ArmModel, obstacles: list[Obstacle], q: np.ndarray) -> float:
    """Exact safety margin: body-to-disk clearance and self-collision margin."""
    margin = self_clearance(arm, q)
    if obstacles:
        centers = np.array([o.center for o in obstacles])
        radii = np.array([o.radius for o in obstacles])
        margin = min(margin, float((arm_sdf_points(arm, centers, q) - radii).min()))
    return margin


def frechet_distance(path_a: np.ndarray, path_b: np.ndarray) -> float:
    """Discrete Frechet distance between two polylines via dynamic programming."""
    a = np.atleast_2d(np.asarray(path_a, dtype=float))
    b = np.atleast_2d(np.asarray(path_b, dtype=float))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("polylines must be non-empty")
    diff = a[:, None, :] - b[None, :, :]
    d = np.sqrt(np.sum(diff * diff, axis=2))
    n, m = d.shape
    dp = np.empty((n, m))
    dp[0, 0] = d[0, 0]
    for j in range(1, m):
        dp[0, j] = max(dp[0, j - 1], d[0, j])
    for i in range(1, n):
        dp[i, 0] = max(dp[i - 1, 0], d[i, 0])
        row_prev = dp[i - 1]
        row = dp[i]
        for j in range(1, m):
            row[j] = max(min(row_prev[j], row_prev[j - 1], row[j - 1]), d[i, j])
    return float(dp[-1, -1])


def resample_polyline(path: np.ndarray, n: int = 200) -> np.ndarray:
    path = np.atleast_2d(np.asarray(path, dtype=float))
    if path.shape[0] == 1:
        return np.tile(path[0], (n, 1))
    seg = np.linalg.norm(np.diff(path, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total <= 1e-12:
        return np.tile(path[0], (n, 1))
    targets = np.linspace(0.0, total, n)
    out = np.empty((n, path.shape[1]))
    for k, s in enumerate(targets):
        i = min(int(np.searchsorted(cum, s, side="right")) - 1, len(seg) - 1)
        t = (s - cum[i]) / seg[i] if seg[i] > 0 else 0.0
        out[k] = path[i] + t * (path[i + 1] - path[i])
    return out


@dataclass
class SimResult:
    success: bool
    failure_cause: str | None
    frechet_error: float
    min_oracle_barrier: float
    steps: int
    reached_time: float | None = None
    unsafe_fallbacks: int = 0
    log: dict | None = None


def oracle_fields(contact_db: ContactDB, scdf_db: SelfCollisionDB):
    return OracleEnvField(contact_db), OracleSelfField(scdf_db)


def plan_scenario(scenario: Scenario, plan_mode, env_field, sc_field,
                  planner_params: PlannerParams | None = None,
                  rrt_params: RrtParams | None = None):
    """Plan on the static snapshot at t=0. Returns (traj, stats, goals, goal_idx)."""
    goals = scenario.goals()
    if not goals:
        return None, None, [], -1
    cloud0 = sense(scenario, 0.0)

    def h(q):
        return barrier_value(env_field, sc_field, cloud0, q)

    arm = scenario.arm
    if plan_mode == "bubble":
        params = planner_params or PlannerParams(seed=scenario.seed)
        traj, graph, stats, goal_idx = plan_bubble_trajectory(
            h, scenario.q0, goals, params, lo=arm.joint_limits_lo, hi=arm.joint_limits_hi)
        return traj, stats, goals, goal_idx
    if plan_mode == "rrt":
        params = rrt_params or RrtParams(seed=scenario.seed)
        path, stats = cdf_rrt(h, scenario.q0, goals, params,
                              lo=arm.joint_limits_lo, hi=arm.joint_limits_hi)
        if path is None:
            return None, stats, goals, -1
        goal_idx = int(np.argmin([np.linalg.norm(path[-1] - g) for g in goals]))
        return PiecewiseBezier.from_waypoints(path), stats, goals, goal_idx
    raise ValueError(f"unknown plan mode: {plan_mode}")


def execute_episode(scenario: Scenario, traj: PiecewiseBezier, qG: np.ndarray,
                    control_mode, env_field, sc_field,
                    params: ControlParams | None = None,
                    goal_tol: float = 0.05, keep_log: bool = False) -> SimResult:
    """Run the closed loop against moving obstacles; oracle-adjudicated."""
    params = params or ControlParams()
    arm = scenario.arm
    dt = params.dt
    n_steps = int(round(scenario.duration / dt))
    q = scenario.q0.copy()
    u_prev = np.zeros(arm.m)
    gov = init_governor(traj)
    qG = np.asarray(qG, dtype=float)
    min_margin = np.inf
    exec_path = [q.copy()]
    log = {"t": [], "q": [], "u": [], "s": [], "margin": []} if keep_log else None
    stall_steps = 0
    stall_limit = int(round(3.0 / dt))
    unsafe = 0
    result_cause = "timeout"
    success = False
    reached_time = None

    for k in range(n_steps):
        t = k * dt
        obs = obstacles_at(scenario, t)
        margin = oracle_margin(arm, obs, q)
        min_margin = min(min_margin, margin)
        if margin <= 0.0:
            result_cause = "collision"
            break
        if np.linalg.norm(q - qG) <= goal_tol:
            success = True
            result_cause = None
            reached_time = t
            break
        cloud = sense(scenario, t)
        s_before = gov.s
        u, gov, diag = control_step(q, u_prev, traj, cloud, env_field, sc_field,
                                    gov, params, mode=control_mode, seed=scenario.seed + k)
        unsafe += int(diag.unsafe_fallback)
        if gov.s - s_before < 1e-9 and np.linalg.norm(u) < 1e-4:
            stall_steps += 1
            if stall_steps >= stall_limit:
                result_cause = "stall"
                break
        else:
            stall_steps = 0
        q = q + dt * u
        u_prev = u
        exec_path.append(q.copy())
        if keep_log:
            log["t"].append(t)
            log["q"].append(q.tolist())
            log["u"].append(u.tolist())
            log["s"].append(gov.s)
            log["margin"].append(margin)

    planned = traj.sample(200)
    executed = resample_polyline(np.array(exec_path), 200)
    fre = frechet_distance(planned, executed)
    if success and min_margin <= 0.0:
        success = False
        result_cause = "collision"
    return SimResult(success=success, failure_cause=result_cause if not success else None,
                     frechet_error=fre, min_oracle_barrier=float(min_margin),
                     steps=len(exec_path) - 1, reached_time=reached_time,
                     unsafe_fallbacks=unsafe, log=log)


def run_episode(scenario: Scenario, plan_mode, control_mode, env_field, sc_field,
                planner_params=None, rrt_params=None, control_params=None,
                keep_log: bool = False) -> SimResult:
    traj, stats, goals, goal_idx = plan_scenario(
        scenario, plan_mode, env_field, sc_field, planner_params, rrt_params)
    if traj is None:
        return SimResult(success=False, failure_cause="planner", frechet_error=np.nan,
                         min_oracle_barrier=np.nan, steps=0)
    return execute_episode(scenario, traj, goals[goal_idx], control_mode,
                           env_field, sc_field, control_params, keep_log=keep_log)


# ---------------------------------------------------------------------------
# randomized scenarios


def cspace_connected(arm, env_field, sc_field, cloud, q0, goals,
                     thresh: float = 0.10, res: int = 61):
    """Coarse flood-fill reachability: does q0's safe component contain a goal?

    Conservative generation aid: the barrier is sampled on a res x res grid of
    the joint box with 4-connectivity at threshold thresh.
    """
    from scipy import ndimage

    axes = [np.linspace(arm.joint_limits_lo[j], arm.joint_limits_hi[j], res)
            for j in range(arm.m)]
    mesh = np.meshgrid(*axes, indexing="ij")
    Q = np.stack([g.ravel() for g in mesh], axis=1)
    h = sc_field.values_batch(Q)
    if len(cloud):
        h = np.minimum(h, env_field.values_batch(cloud.points, Q).min(axis=0))
    free = (h > thresh).reshape([res] * arm.m)
    labels, _ = ndimage.label(free)

    def cell(q):
        idx = tuple(
            int(round((q[j] - arm.joint_limits_lo[j])
                      / (arm.joint_limits_hi[j] - arm.joint_limits_lo[j]) * (res - 1)))
            for j in range(arm.m)
        )
        return tuple(np.clip(idx, 0, res - 1))

    lab0 = labels[cell(q0)]
    if lab0 == 0:
        return False
    return any(labels[cell(g)] == lab0 for g in goals)


def random_scenario(
    arm: ArmModel,
    env_field,
    sc_field,
    seed: int,
    n_obstacles: int = 4,
    dynamic: bool = False,
    sensor: SensorSpec | None = None,
    duration: float = 40.0,
    safety_floor: float = 0.12,
    max_tries: int = 400,
) -> Scenario:
    """Sample obstacles and a reachable goal so that start and one goal are safe.

    The goal end-effector target is at least 4 m from the start end-effector;
    start/goal barrier values must exceed safety_floor under a noise-free sense,
    and the start's safe component must contain a goal (coarse flood fill).
    """
    rng = np.random.default_rng(seed)
    q0 = np.zeros(arm.m)
    ee0 = forward_kinematics(arm, q0)[-1]
    sensor = sensor or SensorSpec()
    clean = SensorSpec(n_points=sensor.n_points, noise_sigma=0.0,
                       velocity_noise_sigma=0.0, nominal_speed=None)

    for _ in range(max_tries):
        r = rng.uniform(0.9, 3.8)
        ang = rng.uniform(-np.pi, np.pi)
        target = r * np.array([np.cos(ang), np.sin(ang)])
        if np.linalg.norm(target - ee0) < 4.0:
            continue
        goals = inverse_kinematics_2link(arm, target) if arm.m == 2 else []
        if not goals:
            continue

        obstacles = []
        ok = True
        for _ in range(n_obstacles):
            placed = False
            for _ in range(60):
                radius = rng.uniform(0.4, 0.9)
                rc = rng.uniform(1.0, 4.2)
                ac = rng.uniform(-np.pi, np.pi)
                center = rc * np.array([np.cos(ac), np.sin(ac)])
                cand = Obstacle(center=center, radius=radius, velocity=np.zeros(2))
                if np.linalg.norm(center) < radius + 0.4:
                    continue
                if oracle_margin(arm, [cand], q0) < 0.25:
                    continue
                obstacles.append(cand)
                placed = True
                break
            if not placed:
                ok = False
                break
        if not ok:
            continue

        if dynamic:
            for o in obstacles:
                speed = max(0.05, rng.normal(0.5, 0.1))
                direction = rng.uniform(-np.pi, np.pi)
                o.velocity = speed * np.array([np.cos(direction), np.sin(direction)])

        scenario = Scenario(arm=arm, obstacles=obstacles, q0=q0, goal_target=target,
                            sensor=sensor, duration=duration, seed=seed)
        probe = replace(scenario, sensor=clean)
        cloud0 = sense(probe, 0.0)

        def h(q):
            return barrier_value(env_field, sc_field, cloud0, q)

        if h(q0) <= safety_floor:
            continue
        safe_goals = [g for g in goals if h(g) > safety_floor]
        if not safe_goals:
            continue
        # reachability check on a thinned cloud (values only, coarse grid)
        thin = cloud0.points[:: max(1, len(cloud0) // 28)]
        thin_cloud = PointCloud(points=thin, velocities=np.zeros_like(thin))
        if not cspace_connected(arm, env_field, sc_field, thin_cloud, q0, safe_goals):
            continue
        return scenario
    raise RuntimeError(f"could not sample a feasible scenario for seed {seed}")

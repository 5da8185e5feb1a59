"""Bubble-graph planner and the RRT baseline over a barrier value function.

The planner only needs barrier values h(q); every query is counted as one
collision check. Bubbles are configuration-space balls of radius h(q) - eta,
so a single query certifies a whole region.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Bubble:
    center: np.ndarray
    radius: float


@dataclass
class PlannerParams:
    eta: float = 0.05
    goal_bias: float = 0.1
    n_max: int = 2000
    r_min: float = 0.03
    seed: int = 0
    all_goals: bool = False  # keep sampling until n_max even after a goal connects
    max_attempts: int = 40000  # sampling cap; bounds runtime when space saturates


@dataclass
class RrtParams:
    step: float = 0.1
    goal_bias: float = 0.1
    eta: float = 0.05
    check_resolution: float = 0.089
    max_nodes: int = 2000
    seed: int = 0


@dataclass
class PlanStats:
    collision_checks: int = 0
    bubbles_created: int = 0
    planning_time: float = 0.0
    path_length: float = 0.0
    success: bool = False
    skipped_goals: list = field(default_factory=list)


@dataclass
class BubbleGraph:
    bubbles: list[Bubble] = field(default_factory=list)
    adjacency: dict = field(default_factory=dict)  # id -> list of neighbor ids
    start_id: int = 0
    goal_ids: list = field(default_factory=list)   # vertex id per seeded goal

    def add_bubble(self, bubble: Bubble) -> int:
        vid = len(self.bubbles)
        self.bubbles.append(bubble)
        self.adjacency[vid] = []
        return vid

    def connect_overlapping(self, vid: int) -> list[int]:
        """Link vid to every existing bubble whose safe region overlaps it."""
        b = self.bubbles[vid]
        linked = []
        for i, other in enumerate(self.bubbles):
            if i == vid:
                continue
            if np.linalg.norm(b.center - other.center) <= b.radius + other.radius:
                self.adjacency[vid].append(i)
                self.adjacency[i].append(vid)
                linked.append(i)
        return linked


class StartInfeasibleError(RuntimeError):
    pass


def edge_cost(b_i: Bubble, b_j: Bubble) -> float:
    """Single-sided Hausdorff distance from bubble i to bubble j."""
    return max(0.0, float(np.linalg.norm(b_i.center - b_j.center)) + b_i.radius - b_j.radius)


class _UnionFind:
    def __init__(self):
        self.parent = {}

    def add(self, x):
        self.parent.setdefault(x, x)

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra

    def same(self, a, b):
        return self.find(a) == self.find(b)


def build_bubble_graph(h, q0, goals, params: PlannerParams, lo=None, hi=None):
    """Grow a graph of safe bubbles from q0 toward the goal configurations.

    h: barrier value function h(q) -> float. Sampling is uniform over the box
    [lo, hi] (defaults to [-pi, pi]^m) with probability goal_bias of drawing a
    goal configuration instead. Each h query counts as one collision check.
    """
    q0 = np.asarray(q0, dtype=float)
    m = q0.size
    lo = np.full(m, -np.pi) if lo is None else np.asarray(lo, dtype=float)
    hi = np.full(m, np.pi) if hi is None else np.asarray(hi, dtype=float)
    rng = np.random.default_rng(params.seed)
    stats = PlanStats()
    t_start = time.perf_counter()

    def query(q):
        stats.collision_checks += 1
        return float(h(q))

    r0 = query(q0) - params.eta
    if r0 <= params.r_min:
        raise StartInfeasibleError("start configuration too close to the unsafe set")

    graph = BubbleGraph()
    graph.start_id = graph.add_bubble(Bubble(center=q0.copy(), radius=r0))
    uf = _UnionFind()
    uf.add(graph.start_id)

    usable_goals = []
    for gi, g in enumerate(goals):
        g = np.asarray(g, dtype=float)
        rg = query(g) - params.eta
        if rg <= params.r_min:
            stats.skipped_goals.append(gi)
            graph.goal_ids.append(-1)
            continue
        vid = graph.add_bubble(Bubble(center=g.copy(), radius=rg))
        uf.add(vid)
        for nb in graph.connect_overlapping(vid):
            uf.union(vid, nb)
        graph.goal_ids.append(vid)
        usable_goals.append(g)

    def goal_connected():
        return any(v >= 0 and uf.same(graph.start_id, v) for v in graph.goal_ids)

    connected = goal_connected()
    attempts = 0
    while (len(graph.bubbles) < params.n_max and attempts < params.max_attempts
           and not (connected and not params.all_goals)):
        attempts += 1
        if usable_goals and rng.uniform() < params.goal_bias:
            q_rand = usable_goals[rng.integers(len(usable_goals))]
        else:
            q_rand = rng.uniform(lo, hi)
        centers = np.array([b.center for b in graph.bubbles])
        radii = np.array([b.radius for b in graph.bubbles])
        surf = np.maximum(0.0, np.linalg.norm(q_rand - centers, axis=1) - radii)
        near = int(np.argmin(surf))
        if surf[near] <= 0.0:
            continue  # inside an existing bubble, no new information
        b_near = graph.bubbles[near]
        direction = q_rand - b_near.center
        q_new = b_near.center + b_near.radius * direction / np.linalg.norm(direction)
        r_new = query(q_new) - params.eta
        if r_new <= params.r_min:
            continue
        vid = graph.add_bubble(Bubble(center=q_new, radius=r_new))
        uf.add(vid)
        for nb in graph.connect_overlapping(vid):
            uf.union(vid, nb)
        if not connected:
            connected = goal_connected()

    stats.bubbles_created = len(graph.bubbles)
    stats.success = goal_connected()
    stats.planning_time = time.perf_counter() - t_start
    return graph, stats


def select_path(graph: BubbleGraph, goals=None):
    """Dijkstra over directed single-sided Hausdorff costs; lowest-cost goal wins.

    Returns (list of bubble ids from start to the chosen goal, goal index) or
    None when no seeded goal is connected.
    """
    n = len(graph.bubbles)
    dist = np.full(n, np.inf)
    prev = np.full(n, -1, dtype=int)
    dist[graph.start_id] = 0.0
    pq = [(0.0, graph.start_id)]
    while pq:
        d, u = heapq.heappop(pq)
        if d > dist[u]:
            continue
        for v in graph.adjacency[u]:
            nd = d + edge_cost(graph.bubbles[u], graph.bubbles[v])
            if nd < dist[v] - 1e-15:
                dist[v] = nd
                prev[v] = u
                heapq.heappush(pq, (nd, v))
    best_goal, best_cost = -1, np.inf
    for gi, vid in enumerate(graph.goal_ids):
        if vid >= 0 and dist[vid] < best_cost:
            best_cost = dist[vid]
            best_goal = gi
    if best_goal < 0:
        return None
    path = []
    v = graph.goal_ids[best_goal]
    while v != -1:
        path.append(v)
        v = prev[v]
    path.reverse()
    if path[0] != graph.start_id:
        return None
    return path, best_goal


def cdf_rrt(h, q0, goals, params: RrtParams, lo=None, hi=None):
    """RRT baseline validating every edge sample against the barrier.

    An edge is valid iff h(q) > eta at every sample spaced <= check_resolution
    along it; every h query counts as one collision check.
    """
    q0 = np.asarray(q0, dtype=float)
    m = q0.size
    lo = np.full(m, -np.pi) if lo is None else np.asarray(lo, dtype=float)
    hi = np.full(m, np.pi) if hi is None else np.asarray(hi, dtype=float)
    rng = np.random.default_rng(params.seed)
    stats = PlanStats()
    t_start = time.perf_counter()

    def query(q):
        stats.collision_checks += 1
        return float(h(q))

    def edge_valid(a, b):
        length = np.linalg.norm(b - a)
        n_checks = max(1, int(np.ceil(length / params.check_resolution)))
        for t in np.linspace(1.0 / n_checks, 1.0, n_checks):
            if query(a + t * (b - a)) <= params.eta:
                return False
        return True

    if query(q0) <= params.eta:
        raise StartInfeasibleError("start configuration unsafe")
    usable_goals = []
    for gi, g in enumerate(goals):
        g = np.asarray(g, dtype=float)
        if query(g) > params.eta:
            usable_goals.append(g)
        else:
            stats.skipped_goals.append(gi)

    nodes = [q0]
    parents = [-1]
    path = None
    while len(nodes) < params.max_nodes and path is None:
        goal_draw = None
        if usable_goals and rng.uniform() < params.goal_bias:
            goal_draw = int(rng.integers(len(usable_goals)))
            q_rand = usable_goals[goal_draw]
        else:
            q_rand = rng.uniform(lo, hi)
        pts = np.array(nodes)
        dists = np.linalg.norm(pts - q_rand, axis=1)
        near = int(np.argmin(dists))
        if dists[near] < 1e-12:
            continue
        step = min(params.step, dists[near])
        q_new = q_rand.copy() if step == dists[near] else (
            nodes[near] + step * (q_rand - nodes[near]) / dists[near])
        if not edge_valid(nodes[near], q_new):
            continue
        nodes.append(q_new)
        parents.append(near)
        # a goal is reached only when a goal-biased draw extends onto it
        if goal_draw is not None and np.linalg.norm(q_new - q_rand) < 1e-12:
            idx = len(nodes) - 1
            rev = []
            while idx != -1:
                rev.append(nodes[idx])
                idx = parents[idx]
            path = np.array(rev[::-1])

    stats.bubbles_created = len(nodes)
    stats.success = path is not None
    if path is not None:
        stats.path_length = float(np.linalg.norm(np.diff(path, axis=0), axis=1).sum())
    stats.planning_time = time.perf_counter() - t_start
    return path, stats


def plan_bubble_trajectory(h, q0, goals, params: PlannerParams,
                           weights=None, degree: int = 5, lo=None, hi=None):
    """Full pipeline: bubble graph, path selection, Bezier refinement.

    Returns (trajectory, graph, stats, goal_index); trajectory is None on failure.
    """
    from .bezier import optimize_trajectory

    graph, stats = build_bubble_graph(h, q0, goals, params, lo=lo, hi=hi)
    t0 = time.perf_counter()
    sel = select_path(graph) if stats.success else None
    if sel is None:
        stats.success = False
        stats.planning_time += time.perf_counter() - t0
        return None, graph, stats, -1
    path_ids, goal_idx = sel
    chain = [graph.bubbles[i] for i in path_ids]
    qG = np.asarray(goals[goal_idx], dtype=float)
    traj = optimize_trajectory(chain, np.asarray(q0, dtype=float), qG,
                               weights=weights, degree=degree)
    stats.path_length = traj.arc_length()
    stats.planning_time += time.perf_counter() - t0
    return traj, graph, stats, goal_idx

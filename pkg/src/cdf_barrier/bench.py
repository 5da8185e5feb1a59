"""Benchmark tables: planner comparison and controller comparison.

All CSV outputs are byte-deterministic for a fixed (config, seed); wall-clock
timings are reported on stdout and in timings.txt only.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .control import ControlParams
from .kinematics import two_link_arm
from .planner import PlannerParams, RrtParams
from .sim import (
    Scenario,
    SensorSpec,
    execute_episode,
    plan_scenario,
    random_scenario,
)


@dataclass
class BenchConfig:
    n_scenarios: int = 100
    seed: int = 0
    planners: tuple = ("bubble", "rrt")
    controllers: tuple = ("pd", "cbf", "dr_cbf")
    variants: tuple = ("static", "dynamic")
    duration: float = 40.0
    n_points: int = 100
    noise_sigma: float = 0.01
    velocity_noise_sigma: float = 0.02
    planner_seed_offset: int = 10_000
    M2: int = 1              # oracle fields carry no dropout; 1 realization per point
    run_planners: bool = True
    run_controllers: bool = True


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None or (isinstance(x, float) and not np.isfinite(x)):
        return "nan"
    return format(float(x), ".9g")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")


def _mean_std(values):
    vals = np.asarray([v for v in values if np.isfinite(v)], dtype=float)
    if vals.size == 0:
        return np.nan, np.nan
    return float(vals.mean()), float(vals.std())


def bench(config: BenchConfig, env_field, sc_field, out_dir, arm=None, verbose=True):
    """Run planner and controller tables; returns a dict of aggregate results."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    arm = arm or two_link_arm()
    sensor = SensorSpec(n_points=config.n_points, noise_sigma=config.noise_sigma,
                        velocity_noise_sigma=config.velocity_noise_sigma)
    timings = []
    results = {}

    scenarios = []
    for i in range(config.n_scenarios):
        scenarios.append(random_scenario(
            arm, env_field, sc_field, seed=config.seed * 1_000_003 + i,
            dynamic=True, sensor=sensor, duration=config.duration))

    if config.run_planners:
        rows = []
        agg = {p: {"checks": [], "length": [], "success": [], "time": []} for p in config.planners}
        for i, scenario in enumerate(scenarios):
            static = replace(scenario, obstacles=[replace(o, velocity=np.zeros(2)) for o in scenario.obstacles])
            for planner in config.planners:
                pseed = config.planner_seed_offset + i
                t0 = time.perf_counter()
                traj, stats, goals, gi = plan_scenario(
                    static, planner, env_field, sc_field,
                    planner_params=PlannerParams(seed=pseed),
                    rrt_params=RrtParams(seed=pseed, max_nodes=4000),
                )
                wall = time.perf_counter() - t0
                ok = traj is not None and stats.success
                rows.append([i, planner, ok, stats.collision_checks,
                             stats.path_length if ok else np.nan, stats.bubbles_created])
                agg[planner]["checks"].append(stats.collision_checks)
                agg[planner]["length"].append(stats.path_length if ok else np.nan)
                agg[planner]["success"].append(ok)
                agg[planner]["time"].append(wall)
        _write_csv(out / "planner_results.csv",
                   ["scenario", "planner", "success", "collision_checks", "path_length", "nodes"],
                   rows)
        srows = []
        for planner in config.planners:
            cm, cs = _mean_std(agg[planner]["checks"])
            lm, ls = _mean_std(agg[planner]["length"])
            sr = float(np.mean(agg[planner]["success"]))
            srows.append([planner, cm, cs, lm, ls, sr])
            tm, tsd = _mean_std(agg[planner]["time"])
            timings.append(f"planner {planner}: wall {tm:.3f} +/- {tsd:.3f} s per scenario")
            if verbose:
                print(f"[planner {planner}] checks {cm:.1f}+/-{cs:.1f}  "
                      f"length {lm:.2f}+/-{ls:.2f}  success {sr:.3f}  time {tm:.3f}s")
        _write_csv(out / "planner_summary.csv",
                   ["planner", "checks_mean", "checks_std", "path_length_mean",
                    "path_length_std", "success_rate"],
                   srows)
        results["planner"] = {r[0]: {"checks_mean": r[1], "length_mean": r[3], "success": r[5]}
                              for r in srows}

    if config.run_controllers:
        rows = []
        agg = {}
        params = ControlParams(M2=config.M2)
        for i, scenario in enumerate(scenarios):
            static = replace(scenario, obstacles=[replace(o, velocity=np.zeros(2)) for o in scenario.obstacles])
            t0 = time.perf_counter()
            traj, stats, goals, gi = plan_scenario(
                static, "bubble", env_field, sc_field,
                planner_params=PlannerParams(seed=config.planner_seed_offset + i))
            plan_wall = time.perf_counter() - t0
            if traj is None:
                rows.append([i, "any", "any", 0, "planner", np.nan, np.nan, 0])
                continue
            for variant in config.variants:
                world = static if variant == "static" else scenario
                for controller in config.controllers:
                    t0 = time.perf_counter()
                    res = execute_episode(world, traj, goals[gi], controller,
                                          env_field, sc_field, params)
                    wall = time.perf_counter() - t0
                    rows.append([i, variant, controller, res.success,
                                 res.failure_cause or "", res.frechet_error,
                                 res.min_oracle_barrier, res.unsafe_fallbacks])
                    key = (variant, controller)
                    agg.setdefault(key, {"success": [], "frechet": [], "wall": []})
                    agg[key]["success"].append(res.success)
                    if res.success:
                        agg[key]["frechet"].append(res.frechet_error)
                    agg[key]["wall"].append(wall)
            timings.append(f"scenario {i}: plan {plan_wall:.3f} s")
        _write_csv(out / "control_results.csv",
                   ["scenario", "variant", "controller", "success", "failure_cause",
                    "frechet", "min_margin", "unsafe_fallbacks"],
                   rows)
        srows = []
        for (variant, controller), a in sorted(agg.items()):
            sr = float(np.mean(a["success"])) if a["success"] else np.nan
            fm, fs = _mean_std(a["frechet"])
            srows.append([variant, controller, sr, fm, fs])
            wm, _ = _mean_std(a["wall"])
            timings.append(f"control {variant}/{controller}: wall {wm:.2f} s per episode")
            if verbose:
                print(f"[control {variant:7s} {controller:6s}] success {sr:.3f}  "
                      f"frechet {fm:.3f}+/-{fs:.3f}")
        _write_csv(out / "control_summary.csv",
                   ["variant", "controller", "success_rate", "frechet_mean", "frechet_std"],
                   srows)
        results["control"] = {(r[0], r[1]): {"success": r[2], "frechet": r[3]} for r in srows}

    with open(out / "timings.txt", "w") as f:
        f.write("\n".join(timings) + "\n")
    return results

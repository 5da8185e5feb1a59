"""Command-line interface: gen-data, train, plan, simulate, bench.

Every subcommand reads an optional JSON config (--config) whose sections
provide defaults, with individual flags overriding. Learned models are
optional everywhere: --oracle runs directly on the exact databases.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bench import BenchConfig, bench
from .control import ControlParams
from .kinematics import ArmModel, two_link_arm
from .oracle import (
    build_contact_db,
    build_selfcollision_db,
    load_contact_db,
    load_selfcollision_db,
    save_contact_db,
    save_selfcollision_db,
)
from .planner import PlannerParams, RrtParams
from .sim import Scenario, SensorSpec, oracle_fields, plan_scenario, random_scenario, run_episode


def _load_config(path):
    if path is None:
        return {}
    with open(path) as f:
        return json.load(f)


def _arm_from_config(cfg) -> ArmModel:
    if "arm" in cfg:
        return ArmModel.from_dict(cfg["arm"])
    return two_link_arm()


def _load_dbs(db_dir):
    db_dir = Path(db_dir)
    return (load_contact_db(db_dir / "contact_db.json"),
            load_selfcollision_db(db_dir / "scdf_db.json"))


def _fields(args, cfg):
    contact_db, scdf_db = _load_dbs(args.db)
    if getattr(args, "oracle", False) or not getattr(args, "models", None):
        return oracle_fields(contact_db, scdf_db), (contact_db, scdf_db), True
    from .nets import NeuralEnvField, NeuralSelfField, load_model

    mdir = Path(args.models)
    env = NeuralEnvField(load_model(mdir / "env_model.json"))
    sc = NeuralSelfField(load_model(mdir / "sc_model.json"))
    return (env, sc), (contact_db, scdf_db), False


def cmd_gen_data(args):
    cfg = _load_config(args.config)
    arm = _arm_from_config(cfg)
    dbc = cfg.get("db", {})
    ws = cfg.get("workspace", {})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    db = build_contact_db(
        arm,
        workspace_bounds=(ws.get("lo", [-5.0, -5.0]), ws.get("hi", [5.0, 5.0])),
        grid_res=args.grid_res or dbc.get("grid_res", 40),
        cfg_res=dbc.get("cfg_res", 200),
        S=dbc.get("S", 200),
        contact_tol=dbc.get("contact_tol", 1e-4),
    )
    save_contact_db(db, out / "contact_db.json")
    sc = build_selfcollision_db(
        arm,
        n_samples=dbc.get("sc_samples", 200_000),
        seed=args.seed if args.seed is not None else dbc.get("sc_seed", 7),
        overlap_tol=dbc.get("overlap_tol", 0.02),
    )
    save_selfcollision_db(sc, out / "scdf_db.json")
    print(f"contact db: {db.configs.shape[0]} entries over {db.n_cells} cells "
          f"(db_tol {db.db_tol:.4f}); self-collision db: {sc.configs.shape[0]} configs")
    print(f"written to {out}")


def cmd_train(args):
    import torch

    from .nets import TrainConfig, history_to_csv, save_model, train_env_cdf, train_scdf

    cfg = _load_config(args.config)
    tr = cfg.get("train", {})
    contact_db, scdf_db = _load_dbs(args.db)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else tr.get("seed", 0)
    tcfg = TrainConfig(
        lr=tr.get("lr", 2e-4),
        iterations=args.iterations or tr.get("iterations", 10000),
        lam=tr.get("lambda", 0.05),
        seed=seed,
    )
    width = tr.get("width", 256)
    dropout = tr.get("dropout", 0.1)
    which = args.which
    if which in ("env", "both"):
        model = train_env_cdf(contact_db, contact_db.arm, tcfg, width=width, dropout_rate=dropout)
        save_model(model, out / "env_model.json")
        history_to_csv(model, out / "env_loss.csv")
        mae = [r.get("val_mae") for r in model.history if "val_mae" in r][-1]
        print(f"env model saved (final held-out MAE {mae:.4f} rad)")
    if which in ("sc", "both"):
        model = train_scdf(scdf_db, tcfg, width=width, dropout_rate=dropout)
        save_model(model, out / "sc_model.json")
        history_to_csv(model, out / "sc_loss.csv")
        mae = [r.get("val_mae") for r in model.history if "val_mae" in r][-1]
        print(f"sc model saved (final held-out MAE {mae:.4f} rad)")


def _scenario_from_args(args, cfg, fields_pair):
    env_field, sc_field = fields_pair
    sc_cfg = cfg.get("scenario", {})
    if args.scenario:
        with open(args.scenario) as f:
            return Scenario.from_dict(json.load(f))
    arm = _arm_from_config(cfg)
    sensor = SensorSpec(
        n_points=sc_cfg.get("n_points", 100),
        noise_sigma=sc_cfg.get("noise_sigma", 0.01),
        velocity_noise_sigma=sc_cfg.get("velocity_noise_sigma", 0.02),
        nominal_speed=sc_cfg.get("nominal_speed", 0.5),
    )
    return random_scenario(
        arm, env_field, sc_field,
        seed=args.seed if args.seed is not None else sc_cfg.get("seed", 0),
        dynamic=args.dynamic or sc_cfg.get("dynamic", False),
        sensor=sensor,
        duration=sc_cfg.get("duration", 40.0),
    )


def cmd_plan(args):
    cfg = _load_config(args.config)
    (env_field, sc_field), dbs, is_oracle = _fields(args, cfg)
    scenario = _scenario_from_args(args, cfg, (env_field, sc_field))
    pcfg = cfg.get("planner", {})
    seed = args.seed if args.seed is not None else pcfg.get("seed", 0)
    traj, stats, goals, gi = plan_scenario(
        scenario, args.mode, env_field, sc_field,
        planner_params=PlannerParams(seed=seed, **{k: v for k, v in pcfg.items() if k != "seed"}),
        rrt_params=RrtParams(seed=seed),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ok = traj is not None
    payload = {
        "success": ok,
        "mode": args.mode,
        "collision_checks": stats.collision_checks if stats else None,
        "path_length": stats.path_length if ok else None,
        "goal_index": gi,
        "goal_configs": [g.tolist() for g in goals],
        "trajectory": traj.to_dict() if ok else None,
    }
    with open(out / "plan.json", "w") as f:
        json.dump(payload, f, indent=1)
    with open(out / "scenario.json", "w") as f:
        json.dump(scenario.to_dict(), f, indent=1)
    if ok:
        samples = traj.sample(200)
        plot = {
            "waypoints": samples.tolist(),
            "obstacles": [{"center": o.center.tolist(), "radius": o.radius} for o in scenario.obstacles],
        }
        with open(out / "plan_plot.json", "w") as f:
            json.dump(plot, f)
    print(f"plan {'found' if ok else 'FAILED'}; collision checks: "
          f"{stats.collision_checks if stats else 'n/a'}; output in {out}")
    return 0 if ok else 1


def cmd_simulate(args):
    cfg = _load_config(args.config)
    (env_field, sc_field), dbs, is_oracle = _fields(args, cfg)
    scenario = _scenario_from_args(args, cfg, (env_field, sc_field))
    ccfg = cfg.get("control", {})
    params = ControlParams(M2=1 if is_oracle else ccfg.get("M2", 10))
    res = run_episode(scenario, args.plan_mode, args.mode, env_field, sc_field,
                      control_params=params, keep_log=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "result.json", "w") as f:
        json.dump({
            "success": res.success,
            "failure_cause": res.failure_cause,
            "frechet_error": res.frechet_error,
            "min_oracle_barrier": res.min_oracle_barrier,
            "steps": res.steps,
            "reached_time": res.reached_time,
        }, f, indent=1)
    if res.log:
        import csv

        with open(out / "steps.csv", "w", newline="") as f:
            w = csv.writer(f)
            m = scenario.arm.m
            w.writerow(["t"] + [f"q{i}" for i in range(m)] + [f"u{i}" for i in range(m)] + ["s", "margin"])
            for i, t in enumerate(res.log["t"]):
                w.writerow([t] + res.log["q"][i] + res.log["u"][i] + [res.log["s"][i], res.log["margin"][i]])
    print(f"episode: success={res.success} cause={res.failure_cause} "
          f"frechet={res.frechet_error:.3f}; output in {out}")
    return 0 if res.success else 1


def cmd_bench(args):
    cfg = _load_config(args.config)
    (env_field, sc_field), dbs, is_oracle = _fields(args, cfg)
    bcfg_dict = cfg.get("bench", {})
    bcfg = BenchConfig(
        n_scenarios=args.n or bcfg_dict.get("n_scenarios", 100),
        seed=args.seed if args.seed is not None else bcfg_dict.get("seed", 0),
        M2=1 if is_oracle else bcfg_dict.get("M2", 10),
        run_planners=not args.controllers_only,
        run_controllers=not args.planners_only,
    )
    bench(bcfg, env_field, sc_field, args.out, arm=dbs[0].arm)
    print(f"benchmark tables written to {args.out}")


def main(argv=None):
    p = argparse.ArgumentParser(prog="cdf-barrier",
                                description="Configuration-space distance barriers: planning and safe control")
    p.add_argument("--config", help="JSON config file with section defaults")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="build the contact and self-collision databases")
    g.add_argument("--out", required=True)
    g.add_argument("--grid-res", type=int)
    g.add_argument("--seed", type=int)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train the neural distance fields")
    t.add_argument("--db", required=True, help="directory with the generated databases")
    t.add_argument("--which", choices=("env", "sc", "both"), default="both")
    t.add_argument("--iterations", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(fn=cmd_train)

    def planning_args(sp):
        sp.add_argument("--db", required=True)
        sp.add_argument("--models", help="directory with trained models (else oracle)")
        sp.add_argument("--oracle", action="store_true", help="use exact databases as the barrier")
        sp.add_argument("--scenario", help="scenario JSON (else randomized)")
        sp.add_argument("--dynamic", action="store_true")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", required=True)

    pl = sub.add_parser("plan", help="plan one scenario")
    planning_args(pl)
    pl.add_argument("--mode", choices=("bubble", "rrt"), default="bubble")
    pl.set_defaults(fn=cmd_plan)

    si = sub.add_parser("simulate", help="plan and execute one closed-loop episode")
    planning_args(si)
    si.add_argument("--plan-mode", choices=("bubble", "rrt"), default="bubble")
    si.add_argument("--mode", choices=("pd", "cbf", "dr_cbf"), default="dr_cbf")
    si.set_defaults(fn=cmd_simulate)

    b = sub.add_parser("bench", help="run the benchmark tables")
    planning_args(b)
    b.add_argument("-n", type=int, help="number of scenarios")
    b.add_argument("--planners-only", action="store_true")
    b.add_argument("--controllers-only", action="store_true")
    b.set_defaults(fn=cmd_bench)

    args = p.parse_args(argv)
    return args.fn(args) or 0


if __name__ == "__main__":
    sys.exit(main())

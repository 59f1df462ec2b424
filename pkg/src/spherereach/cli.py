"""Command-line entry point: plan, bench, sdf, dump-reachsets."""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .bench import ExperimentConfig, SceneError, load_scene, run_experiment, write_stats
from .occupancy import dump_sfo, sfo_for_k
from .planner import PlannerConfig, PlanningProblem, plan_receding_horizon
from .trajectories import DEFAULT_A_MAX, DEFAULT_N_T, DEFAULT_T_FIN, DEFAULT_T_PLAN, TrajectoryFamily
from .zonotope import CASE_NAMES, load_obstacle, sdf_batch

log = logging.getLogger("spherereach")


def _floats(text: str) -> list:
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_planner_flags(p):
    p.add_argument("--n-s", type=int, default=5, help="balls per link")
    p.add_argument("--n-t", type=int, default=DEFAULT_N_T, help="time intervals")
    p.add_argument("--a-max", type=float, default=DEFAULT_A_MAX, help="rad/s^2 at |k| = 1")
    p.add_argument("--t-plan", type=float, default=DEFAULT_T_PLAN)
    p.add_argument("--t-fin", type=float, default=DEFAULT_T_FIN)
    p.add_argument("--max-iters", type=int, default=150, help="planning iterations")


def _planner_config(args) -> PlannerConfig:
    return PlannerConfig(n_t=args.n_t, n_s=args.n_s, a_max=args.a_max, t_plan=args.t_plan,
                         t_fin=args.t_fin, max_iters=args.max_iters)


def cmd_plan(args) -> int:
    scene = load_scene(args.scene)
    report = plan_receding_horizon(scene.chain, scene.obstacles, scene.start, scene.goal,
                                   _planner_config(args), log=log.info)
    report.dump(args.out)
    log.info("status %s after %d iterations", report.status, len(report.iterations))
    return report.exit_code


def cmd_bench(args) -> int:
    cfg = ExperimentConfig(dof=args.dof, n_obstacles=args.n_obstacles, trials=args.trials,
                           seed=args.seed, jobs=args.jobs, planner=_planner_config(args),
                           report_dir=args.report_dir)
    stats = run_experiment(cfg, log=log.info)
    tpath = write_stats(stats, args.out)
    log.info("%d/%d successes, %d collisions; timings in %s", stats.successes, stats.trials,
             stats.collisions, tpath)
    return 0 if stats.collisions == 0 else 3


def cmd_sdf(args) -> int:
    obs = load_obstacle(args.obstacle)
    if len(args.point) != 3:
        raise ValueError("--point needs three numbers")
    v, case, g = sdf_batch(obs, np.array(args.point)[None], with_grad=True)
    print(json.dumps({"sdf": float(v[0]), "case": CASE_NAMES[case[0]], "gradient": g[0].tolist()}))
    return 0


def cmd_dump(args) -> int:
    scene = load_scene(args.scene)
    k = np.array(args.k)
    if k.shape != (scene.chain.n_q,):
        raise ValueError(f"--k needs {scene.chain.n_q} numbers")
    fam = TrajectoryFamily(scene.start, np.zeros_like(scene.start), args.t_plan, args.t_fin, args.a_max)
    problem = PlanningProblem(scene.chain, fam, scene.obstacles, scene.goal, n_t=args.n_t, n_s=args.n_s)
    dump_sfo(sfo_for_k(problem.sjo, k, args.n_s), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spherereach", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="receding-horizon plan for one scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    _add_planner_flags(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("bench", help="seeded random-obstacle experiment")
    p.add_argument("--dof", type=int, choices=(3, 7), default=7)
    p.add_argument("--n-obstacles", type=int, default=10)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--report-dir", default=None, help="write one JSON per trial here")
    _add_planner_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sdf", help="signed distance from a point to an obstacle")
    p.add_argument("--obstacle", required=True)
    p.add_argument("--point", required=True, type=_floats)
    p.set_defaults(func=cmd_sdf)

    p = sub.add_parser("dump-reachsets", help="write SFO balls for one k")
    p.add_argument("--scene", required=True)
    p.add_argument("--k", required=True, type=_floats)
    p.add_argument("--out", required=True)
    _add_planner_flags(p)
    p.set_defaults(func=cmd_dump)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except (SceneError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

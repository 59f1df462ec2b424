"""Scenes, seeded random scenarios, a dense-sampling collision checker and
the experiment runner."""
from __future__ import annotations

import json
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .jsonio import read_document
from .kinematics import KinematicChain, fixture_chain, joint_positions, load_chain
from .planner import PlannerConfig, PlanReport, plan_receding_horizon
from .zonotope import ObstacleSolid, load_obstacle, projection_oracle, sdf_batch

DEFAULT_EDGE = 0.20
DEFAULT_DT_FINE = 1e-3
AXIS_SPACING = 0.005  # m between sampled capsule-axis balls
SCENE_CLEARANCE = 0.01  # start/goal clearance required when placing obstacles
MIN_OBSTACLE_RADIUS = 0.15  # keep obstacle centers off the base


class SceneError(ValueError):
    pass


@dataclass
class Scene:
    chain: KinematicChain
    obstacles: list
    start: np.ndarray
    goal: np.ndarray
    seed: object = None
    label: str = ""
    chain_ref: str | None = None

    def to_document(self) -> dict:
        return {
            "chain": self.chain_ref if self.chain_ref else self.chain.to_document(),
            "obstacles": [o.to_document() for o in self.obstacles],
            "start": np.asarray(self.start).tolist(),
            "goal": np.asarray(self.goal).tolist(),
            "seed": self.seed,
            "label": self.label,
        }

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_document(), fh, indent=1)


def load_scene(document, check: bool = True) -> Scene:
    document = read_document(document)
    for key in ("chain", "start", "goal"):
        if key not in document:
            raise SceneError(f"scene is missing {key!r}")
    ref = document["chain"]
    chain = fixture_chain(ref) if isinstance(ref, (str, int)) else load_chain(ref)
    obstacles = [load_obstacle(o) for o in document.get("obstacles", [])]
    start = np.array([float(x) for x in document["start"]])
    goal = np.array([float(x) for x in document["goal"]])
    if start.shape != (chain.n_q,) or goal.shape != (chain.n_q,):
        raise SceneError("start/goal length does not match the chain")
    scene = Scene(chain, obstacles, start, goal, document.get("seed"), document.get("label", ""),
                  ref if isinstance(ref, (str, int)) else None)
    if check:
        for name, q in (("start", start), ("goal", goal)):
            lim = chain.q_limits
            if np.any(q < lim[:, 0]) or np.any(q > lim[:, 1]):
                raise SceneError(f"{name} configuration violates joint limits")
            if configuration_clearance(chain, obstacles, q) <= 0:
                raise SceneError(f"{name} configuration is in collision")
    return scene


# -- ground truth ------------------------------------------------------------------

def capsule_clearance(chain: KinematicChain, obstacles, P: np.ndarray, spacing: float = AXIS_SPACING):
    """Smallest (sdf - radius) over densely sampled capsule-axis balls.

    ``P``: sphere centers (N, n_frames, 3).  Returns (N,) clearances.  Links
    whose bounding ball misses an obstacle's bounding ball contribute the
    gap between the two balls instead, a positive lower bound.
    """
    N = P.shape[0]
    out = np.full(N, np.inf)
    if not obstacles:
        return out
    radii = chain.radii
    lengths = np.linalg.norm(np.array(chain.offsets[1:]), axis=1)
    for j in range(chain.n_links):
        a, b = P[:, j], P[:, j + 1]
        ra, rb = radii[j], radii[j + 1]
        n_ax = int(np.ceil(lengths[j] / spacing)) + 1
        lam = np.linspace(0.0, 1.0, n_ax)
        mid = (a + b) / 2
        reach = lengths[j] / 2 + max(ra, rb)
        for obs in obstacles:
            gap = np.linalg.norm(mid - obs.center, axis=1) - reach - obs.bounding_radius()
            near = np.nonzero(gap <= 0.0)[0]
            if len(near) == 0:
                out = np.minimum(out, gap)
                continue
            far = np.ones(N, bool)
            far[near] = False
            out[far] = np.minimum(out[far], gap[far])
            cent = a[near, None] + lam[None, :, None] * (b[near] - a[near])[:, None]
            r = ra + lam * (rb - ra)
            d, _ = sdf_batch(obs, cent.reshape(-1, 3))
            clear = (d.reshape(len(near), n_ax) - r[None]).min(axis=1)
            out[near] = np.minimum(out[near], clear)
    return out


def configuration_clearance(chain, obstacles, q) -> float:
    P = joint_positions(chain, np.asarray(q, dtype=float)[None])
    return float(capsule_clearance(chain, obstacles, P)[0])


@dataclass
class CollisionVerdict:
    collision: bool
    min_clearance: float
    first_time: float | None = None
    oracle_gap: float = 0.0  # sdf vs projection oracle at the closest balls


def _oracle_gap(chain, obstacles, P1, spacing, n_check=5) -> float:
    """Re-evaluate the n_check closest balls of one configuration with the
    projection oracle instead of the closed-form sdf."""
    balls = []
    for j in range(chain.n_links):
        n_ax = int(np.ceil(np.linalg.norm(chain.offsets[j + 1]) / spacing)) + 1
        lam = np.linspace(0.0, 1.0, n_ax)
        balls.append(P1[j] + lam[:, None] * (P1[j + 1] - P1[j]))
    cent = np.concatenate(balls)
    gap = 0.0
    for obs in obstacles:
        d, _ = sdf_batch(obs, cent)
        for n in np.argsort(d, kind="stable")[:n_check]:
            gap = max(gap, abs(d[n] - projection_oracle(obs, cent[n])))
    return gap


def ground_truth_collision_check(scene: Scene, trajectory, dt_fine: float = DEFAULT_DT_FINE,
                                 spacing: float = AXIS_SPACING) -> CollisionVerdict:
    """``trajectory`` is a PlanReport or a pair (times, configurations)."""
    if isinstance(trajectory, PlanReport):
        ts, Q = trajectory.sample(dt_fine)
    else:
        ts, Q = trajectory
        ts, Q = np.asarray(ts, dtype=float), np.atleast_2d(np.asarray(Q, dtype=float))
    P = joint_positions(scene.chain, Q)
    clear = capsule_clearance(scene.chain, scene.obstacles, P, spacing)
    hit = np.nonzero(clear <= 0)[0]
    gap = 0.0
    if scene.obstacles and len(clear):
        gap = _oracle_gap(scene.chain, scene.obstacles, P[int(np.argmin(clear))], spacing)
    return CollisionVerdict(bool(len(hit)), float(clear.min()) if len(clear) else np.inf,
                            float(ts[hit[0]]) if len(hit) else None, gap)


# -- random scenes ----------------------------------------------------------------

def _random_configuration(chain, rng):
    lim = chain.q_limits
    return rng.uniform(lim[:, 0], lim[:, 1])


def generate_random_scene(seed, n_obstacles: int = 10, edge_len: float = DEFAULT_EDGE,
                          chain: KinematicChain | str | int = 7, max_tries: int = 10000) -> Scene:
    """Axis-aligned cubes with centers uniform (by volume) in the shell
    MIN_OBSTACLE_RADIUS <= |c - base| <= reach, start and goal uniform in
    the joint limits.  Obstacles that would touch the start or goal arm
    (within SCENE_CLEARANCE) are redrawn."""
    if n_obstacles < 0:
        raise ValueError("n_obstacles must be >= 0")
    ref = None
    if not isinstance(chain, KinematicChain):
        ref = {3: "chain_3dof", 7: "chain_7dof"}.get(chain, chain)
        chain = fixture_chain(chain)
    rng = np.random.default_rng(seed)
    start = _random_configuration(chain, rng)
    goal = _random_configuration(chain, rng)
    arms = joint_positions(chain, np.stack([start, goal]))
    R = chain.reach()
    base = chain.base_translation
    half = np.full(3, edge_len / 2)
    obstacles = []
    tries = 0
    while len(obstacles) < n_obstacles:
        tries += 1
        if tries > max_tries:
            raise SceneError("could not place obstacles clear of start and goal")
        u = rng.normal(size=3)
        u /= np.linalg.norm(u)
        r = rng.uniform(MIN_OBSTACLE_RADIUS ** 3, R ** 3) ** (1 / 3)
        obs = ObstacleSolid.box(base + r * u, half)
        if capsule_clearance(chain, [obs], arms).min() > SCENE_CLEARANCE:
            obstacles.append(obs)
    seed_doc = seed if isinstance(seed, int) else [int(s) for s in np.atleast_1d(seed)]
    return Scene(chain, obstacles, start, goal, seed_doc, "random", ref)


# -- experiments ---------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    dof: int = 7
    n_obstacles: int = 10
    trials: int = 100
    seed: int = 0
    jobs: int = 1
    edge_len: float = DEFAULT_EDGE
    dt_fine: float = DEFAULT_DT_FINE
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    report_dir: str | None = None


@dataclass
class ExperimentStats:
    trials: int = 0
    successes: int = 0
    collisions: int = 0
    safe_stops: int = 0
    failures: int = 0
    mean_planning_ms: float = 0.0
    stdev_planning_ms: float = 0.0
    mean_constraint_eval_ms: float = 0.0
    stdev_constraint_eval_ms: float = 0.0
    per_trial: list = field(default_factory=list)

    def counts_document(self) -> dict:
        """Everything except wall-clock timings, so reruns are byte-identical."""
        return {"trials": self.trials, "successes": self.successes, "collisions": self.collisions,
                "safe_stops": self.safe_stops, "failures": self.failures,
                "per_trial": self.per_trial}

    def timing_document(self) -> dict:
        return {"mean_planning_ms": self.mean_planning_ms, "stdev_planning_ms": self.stdev_planning_ms,
                "mean_constraint_eval_ms": self.mean_constraint_eval_ms,
                "stdev_constraint_eval_ms": self.stdev_constraint_eval_ms}

    def to_document(self) -> dict:
        return asdict(self)


STATS_KEYS = ("trials", "successes", "collisions", "safe_stops", "failures", "per_trial")


def validate_stats_document(doc: dict) -> None:
    """Light schema check for the counts JSON."""
    for key in STATS_KEYS:
        if key not in doc:
            raise ValueError(f"stats missing {key!r}")
    total = doc["safe_stops"] + doc["failures"] + doc["successes"] + doc["collisions"]
    if total != doc["trials"]:
        raise ValueError("outcome counts do not add up to trials")
    if len(doc["per_trial"]) != doc["trials"]:
        raise ValueError("per_trial length does not match trials")


def run_trial(args):
    cfg, index = args
    scene = generate_random_scene([cfg.seed, index], cfg.n_obstacles, cfg.edge_len, cfg.dof)
    report = plan_receding_horizon(scene.chain, scene.obstacles, scene.start, scene.goal, cfg.planner)
    verdict = ground_truth_collision_check(scene, report, cfg.dt_fine)
    if cfg.report_dir:
        d = Path(cfg.report_dir)
        d.mkdir(parents=True, exist_ok=True)
        doc = {"scene": scene.to_document(), "report": report.to_document(timings=False),
               "ground_truth": asdict(verdict)}
        (d / f"trial_{index:04d}.json").write_text(json.dumps(doc, indent=1), encoding="utf-8")
    solve = [it["solve_ms"] for it in report.iterations]
    cons = [it["constraint_eval_ms"] for it in report.iterations]
    outcome = "collision" if verdict.collision else report.status
    row = {"trial": index, "outcome": outcome, "iterations": len(report.iterations),
           "min_clearance": round(verdict.min_clearance, 9) if np.isfinite(verdict.min_clearance) else None,
           "final_goal_error": round(float(np.max(np.abs(report.final_q - scene.goal))), 9),
           "oracle_agrees": bool(verdict.oracle_gap <= 1e-9)}
    return row, solve, cons


def run_experiment(cfg: ExperimentConfig, log=None) -> ExperimentStats:
    args = [(cfg, i) for i in range(cfg.trials)]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(run_trial, args))
    else:
        results = []
        for a in args:
            results.append(run_trial(a))
            if log:
                log(f"trial {a[1]}: {results[-1][0]['outcome']}")
    stats = ExperimentStats(trials=cfg.trials)
    solve_all, cons_all = [], []
    for row, solve, cons in results:
        stats.per_trial.append(row)
        solve_all += solve
        cons_all += cons
        o = row["outcome"]
        if o == "collision":
            stats.collisions += 1
        elif o == "success":
            stats.successes += 1
        elif o == "safe-stop":
            stats.safe_stops += 1
        else:
            stats.failures += 1
    if solve_all:
        stats.mean_planning_ms = statistics.fmean(solve_all)
        stats.stdev_planning_ms = statistics.pstdev(solve_all)
        stats.mean_constraint_eval_ms = statistics.fmean(cons_all)
        stats.stdev_constraint_eval_ms = statistics.pstdev(cons_all)
    return stats


def write_stats(stats: ExperimentStats, path) -> Path:
    """Counts to ``path``; timings next to it as ``<stem>.timing.json``."""
    path = Path(path)
    path.write_text(json.dumps(stats.counts_document(), indent=1, sort_keys=True) + "\n",
                    encoding="utf-8")
    tpath = path.with_name(path.stem + ".timing.json")
    tpath.write_text(json.dumps(stats.timing_document(), indent=1) + "\n", encoding="utf-8")
    return tpath

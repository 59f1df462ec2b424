"""Trajectory optimization over k with sphere-based collision constraints,
and the receding-horizon loop around it.

One planning iteration builds the trajectory PZs and the SJO for the current
state, then searches k in [-1, 1]^n_q for the lowest cost subject to

  * joint position and velocity limits, bounded over every time segment
    from the k-sliced trajectory PZs,
  * sdf(obstacle, c) - r > 0 for every SFO ball (c, r) of every segment.

Rows that provably hold for every k in the box are dropped up front
("screening"); the remaining rows are evaluated with analytic jacobians.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .kinematics import KinematicChain
from .occupancy import DEFAULT_MAX_DEGREE, DEFAULT_N_S, SjoSet, build_sjo, interior_fractions, sfo_interior
from .trajectories import (DEFAULT_A_MAX, DEFAULT_N_T, DEFAULT_T_FIN, DEFAULT_T_PLAN, TrajectoryFamily,
                           eval_trajectory, make_time_partition, make_trajectory_pzs)
from .zonotope import ObstacleSolid, sdf_batch

CONSTRAINT_TOL = 1e-6
GOAL_TOL = 0.05

KIND_POS, KIND_VEL, KIND_COLLISION = 0, 1, 2
KIND_NAMES = ("pos-limit", "vel-limit", "collision")

# label record of one constraint row; for limit rows j is the joint, m is
# 0 for the upper and 1 for the lower bound, n is unused (-1)
LABEL_DTYPE = np.dtype([("kind", "i1"), ("i", "i4"), ("j", "i4"), ("m", "i4"), ("n", "i4")])


@dataclass(frozen=True)
class SolverBudget:
    max_iters: int = 50
    time_limit: float | None = None  # seconds, None = iteration budget only


@dataclass(frozen=True)
class CostSpec:
    """Distance of q at ``at`` ("plan" = t_plan, "stop" = t_fin) to a waypoint
    that a straight-line planner places at most ``lookahead`` rad (inf-norm)
    from the current configuration toward the goal."""
    at: str = "plan"
    lookahead: float | None = None

    def waypoint(self, q, goal):
        d = np.asarray(goal) - q
        if self.lookahead is None:
            return np.array(goal, dtype=float)
        scale = max(1.0, np.abs(d).max() / self.lookahead)
        return q + d / scale


@dataclass(frozen=True)
class ConstraintBlock:
    values: np.ndarray  # raw margins; feasible means > 0
    jacobian: np.ndarray  # (rows, n_q)
    labels: np.ndarray  # structured LABEL_DTYPE

    def min_margin(self) -> float:
        return float(self.values.min()) if self.values.size else np.inf

    def by_kind(self, kind: int):
        sel = self.labels["kind"] == kind
        return self.values[sel], self.jacobian[sel], self.labels[sel]


@dataclass
class PlanOutcome:
    k: np.ndarray | None  # None plays the role of the NaN sentinel
    cost: float = np.nan
    min_margin: float = np.nan
    iterations: int = 0
    solve_ms: float = 0.0
    constraint_eval_ms: float = 0.0
    n_constraints: int = 0
    message: str = ""

    @property
    def feasible(self) -> bool:
        return self.k is not None


class PlanningProblem:
    """Everything one solve needs, with the k-independent work done once."""

    def __init__(self, chain: KinematicChain, family: TrajectoryFamily, obstacles: Sequence[ObstacleSolid],
                 goal, n_t: int = DEFAULT_N_T, n_s: int = DEFAULT_N_S, cost: CostSpec | None = None,
                 budget: SolverBudget | None = None, max_degree: int | None = DEFAULT_MAX_DEGREE,
                 screen: bool = True):
        if family.n_q != chain.n_q:
            raise ValueError("family and chain disagree on n_q")
        self.chain = chain
        self.family = family
        self.obstacles = list(obstacles)
        self.goal = np.asarray(goal, dtype=float)
        self.n_s = int(n_s)
        if self.n_s < 3:
            raise ValueError("n_s must be >= 3")
        self.cost = cost or CostSpec()
        self.budget = budget or SolverBudget()
        self.partition = make_time_partition(family.t_fin, n_t)
        self.bundle = make_trajectory_pzs(family, self.partition)
        self.sjo: SjoSet = build_sjo(chain, self.bundle, max_degree=max_degree)
        self.n_q = chain.n_q
        self.waypoint = self.cost.waypoint(family.q0, self.goal)
        self._setup_limits(screen)
        self._setup_spheres()
        self._setup_collision(screen)
        self._last_k = None
        self._last_block = None
        self.eval_seconds = 0.0
        self.n_evals = 0

    # -- cost ----------------------------------------------------------------
    def _q_affine(self):
        """q(t*; k) = q_base + q_gain * k for the cost time t*."""
        f = self.family
        tp, D = f.t_plan, f.t_fin - f.t_plan
        if self.cost.at == "plan":
            return f.q0 + f.qd0 * tp, 0.5 * f.a_max * tp ** 2
        if self.cost.at == "stop":
            return f.q0 + f.qd0 * (tp + D / 2), f.a_max * (tp ** 2 / 2 + tp * D / 2)
        raise ValueError(f"unknown cost time {self.cost.at!r}")

    def cost_value(self, k):
        base, gain = self._q_affine()
        r = base + gain * k - self.waypoint
        return float(r @ r), 2.0 * r * gain

    # -- limits ----------------------------------------------------------------
    def _setup_limits(self, screen):
        """Limit rows: for a slice at k, the x^a coefficient is
        P[..., a, 0] + P[..., a, 1] k and sup = c0(k) + |c1(k)| + |c2(k)|."""
        rows = []
        for kind, coef, lim in ((KIND_POS, self.bundle.pos_coef, self.chain.q_limits),
                                (KIND_VEL, self.bundle.vel_coef, self.chain.qd_limits)):
            # worst case over the whole k box
            hi = coef[..., 0, 0] + np.abs(coef[..., 0, 1]) + np.abs(coef[..., 1:, :]).sum(axis=(-1, -2))
            lo = coef[..., 0, 0] - np.abs(coef[..., 0, 1]) - np.abs(coef[..., 1:, :]).sum(axis=(-1, -2))
            up_need = lim[None, :, 1] - hi <= 2 * CONSTRAINT_TOL
            lo_need = lo - lim[None, :, 0] <= 2 * CONSTRAINT_TOL
            if not screen:
                up_need[:] = True
                lo_need[:] = True
            for m, need in ((0, up_need), (1, lo_need)):
                s_idx, j_idx = np.nonzero(need)
                for s, j in zip(s_idx, j_idx):
                    rows.append((kind, s, j, m))
        self._limit_rows = np.array(rows, dtype=np.int64).reshape(-1, 4)

    def _eval_limits(self, k):
        R = self._limit_rows
        if len(R) == 0:
            return np.zeros(0), np.zeros((0, self.n_q)), np.zeros(0, LABEL_DTYPE)
        kind, s, j, m = R.T
        coef = np.where((kind == KIND_POS)[:, None, None], self.bundle.pos_coef[s, j],
                        self.bundle.vel_coef[s, j])  # (r, 3, 2)
        kj = k[j]
        c = coef[..., 0] + coef[..., 1] * kj[:, None]  # (r, 3)
        spread = np.abs(c[:, 1]) + np.abs(c[:, 2])
        dspread = np.sign(c[:, 1]) * coef[:, 1, 1] + np.sign(c[:, 2]) * coef[:, 2, 1]
        lim = np.where((kind == KIND_POS)[:, None], self.chain.q_limits[j], self.chain.qd_limits[j])
        up = m == 0
        val = np.where(up, lim[:, 1] - c[:, 0] - spread, c[:, 0] - spread - lim[:, 0])
        dval = np.where(up, -coef[:, 0, 1] - dspread, coef[:, 0, 1] - dspread)
        jac = np.zeros((len(R), self.n_q))
        jac[np.arange(len(R)), j] = dval
        labels = np.zeros(len(R), LABEL_DTYPE)
        labels["kind"], labels["i"], labels["j"], labels["m"], labels["n"] = kind, s, j, m, -1
        return val, jac, labels

    # -- spheres ----------------------------------------------------------------
    def _setup_spheres(self):
        """Sphere order within a segment: the n_frames SJO balls, then the
        interior balls of link 0, link 1, ...  Labels use (j, m) with m
        counted 1..n_s along each link."""
        F = self.sjo.n_frames
        L = F - 1
        n_int = self.n_s - 2
        jm = [(j, 1) for j in range(L)] + [(L - 1, self.n_s)]
        for j in range(L):
            jm += [(j, m + 2) for m in range(n_int)]
        self._sphere_jm = np.array(jm, dtype=np.int64)
        self.n_spheres = len(jm)

    def spheres(self, k, with_jac: bool = False):
        """All SFO balls for k: centers (S, N, 3), radii (S, N) and optionally
        jacobians (S, N, 3, n_q), (S, N, n_q)."""
        R = self.sjo.radii
        if with_jac:
            C, dC = self.sjo.poly(k, True)
            ci, ri, dci, dri = sfo_interior(C[:, :-1], R[:, :-1], C[:, 1:], R[:, 1:], self.n_s,
                                            dC[:, :-1], dC[:, 1:])
        else:
            C = self.sjo.poly(k)
            ci, ri = sfo_interior(C[:, :-1], R[:, :-1], C[:, 1:], R[:, 1:], self.n_s)
        S = C.shape[0]
        cent = np.concatenate([C, ci.reshape(S, -1, 3)], axis=1)
        rad = np.concatenate([R, ri.reshape(S, -1)], axis=1)
        if not with_jac:
            return cent, rad
        dcent = np.concatenate([dC, dci.reshape(S, -1, 3, self.n_q)], axis=1)
        drad = np.concatenate([np.zeros(R.shape + (self.n_q,)), dri.reshape(S, -1, self.n_q)], axis=1)
        return cent, rad, dcent, drad

    def sphere_bounds(self):
        """Over all k in the box: center boxes (S, N, 3) x2 and max radius (S, N)."""
        lo, hi = self.sjo.poly.bounds()
        R = self.sjo.radii
        f = interior_fractions(self.n_s)
        loA, hiA, loB, hiB = lo[:, :-1], hi[:, :-1], lo[:, 1:], hi[:, 1:]
        ilo = (1 - f)[None, None, :, None] * loA[:, :, None] + f[None, None, :, None] * loB[:, :, None]
        ihi = (1 - f)[None, None, :, None] * hiA[:, :, None] + f[None, None, :, None] * hiB[:, :, None]
        dmax = np.linalg.norm(np.maximum(np.abs(hiB - loA), np.abs(hiA - loB)), axis=-1)
        den = 2.0 * (self.n_s - 2)
        rA, rB = R[:, :-1], R[:, 1:]
        ell = rA[..., None] + f * (rB - rA)[..., None]
        rmax = np.maximum(np.sqrt(ell ** 2 + (dmax / den)[..., None] ** 2), np.maximum(rA, rB)[..., None])
        S = lo.shape[0]
        blo = np.concatenate([lo, ilo.reshape(S, -1, 3)], axis=1)
        bhi = np.concatenate([hi, ihi.reshape(S, -1, 3)], axis=1)
        brad = np.concatenate([R, rmax.reshape(S, -1)], axis=1)
        return blo, bhi, brad

    # -- collision ----------------------------------------------------------------
    def _setup_collision(self, screen):
        """Per obstacle, the (segment, sphere) pairs that can come close."""
        blo, bhi, brad = self.sphere_bounds()
        mid = (blo + bhi) / 2
        half = np.linalg.norm(bhi - blo, axis=-1) / 2
        S, N = brad.shape
        self._pairs = []
        for obs in self.obstacles:
            if screen:
                d, _ = sdf_batch(obs, mid.reshape(-1, 3))
                lower = d.reshape(S, N) - half - brad
                s_idx, n_idx = np.nonzero(lower <= 2 * CONSTRAINT_TOL)
            else:
                s_idx, n_idx = np.divmod(np.arange(S * N), N)
            self._pairs.append((s_idx, n_idx))
        self.n_collision_rows = sum(len(s) for s, _ in self._pairs)

    def _eval_collision(self, k):
        if self.n_collision_rows == 0:
            return np.zeros(0), np.zeros((0, self.n_q)), np.zeros(0, LABEL_DTYPE)
        cent, rad, dcent, drad = self.spheres(k, with_jac=True)
        vals, jacs, labs = [], [], []
        for n, (obs, (s_idx, n_idx)) in enumerate(zip(self.obstacles, self._pairs)):
            if len(s_idx) == 0:
                continue
            c = cent[s_idx, n_idx]
            d, _, g = sdf_batch(obs, c, with_grad=True)
            vals.append(d - rad[s_idx, n_idx])
            jacs.append(np.einsum("px,pxq->pq", g, dcent[s_idx, n_idx]) - drad[s_idx, n_idx])
            lab = np.zeros(len(s_idx), LABEL_DTYPE)
            lab["kind"] = KIND_COLLISION
            lab["i"] = s_idx
            lab["j"] = self._sphere_jm[n_idx, 0]
            lab["m"] = self._sphere_jm[n_idx, 1]
            lab["n"] = n
            labs.append(lab)
        return np.concatenate(vals), np.concatenate(jacs), np.concatenate(labs)

    # -- public ----------------------------------------------------------------
    @property
    def n_constraints(self) -> int:
        return len(self._limit_rows) + self.n_collision_rows

    def eval_constraints(self, k) -> ConstraintBlock:
        k = np.asarray(k, dtype=float)
        if k.shape != (self.n_q,):
            raise ValueError(f"k must have {self.n_q} entries")
        if np.any(np.abs(k) > 1.0 + 1e-12):
            raise ValueError("k outside [-1, 1]")
        if self._last_k is not None and np.array_equal(k, self._last_k):
            return self._last_block
        t0 = time.perf_counter()
        k = np.clip(k, -1.0, 1.0)
        parts = [self._eval_limits(k), self._eval_collision(k)]
        block = ConstraintBlock(np.concatenate([p[0] for p in parts]),
                                np.concatenate([p[1] for p in parts]),
                                np.concatenate([p[2] for p in parts]))
        self.eval_seconds += time.perf_counter() - t0
        self.n_evals += 1
        self._last_k = k.copy()
        self._last_block = block
        return block


class _OutOfTime(Exception):
    pass


def solve(problem: PlanningProblem, k_init=None) -> PlanOutcome:
    """Minimize the cost subject to all margins >= CONSTRAINT_TOL.

    Any k returned is feasible with every raw margin > 0; the starting point
    is also kept as a candidate, so a feasible start is never lost.
    """
    n = problem.n_q
    k0 = np.zeros(n) if k_init is None else np.asarray(k_init, dtype=float)
    if k0.shape != (n,) or np.any(np.abs(k0) > 1.0):
        raise ValueError("k_init must lie in [-1, 1]^n_q")
    problem.eval_seconds = 0.0
    t0 = time.perf_counter()
    budget = problem.budget

    def fun(k):
        return problem.cost_value(np.clip(k, -1, 1))

    def cons(k):
        return problem.eval_constraints(np.clip(k, -1, 1)).values - CONSTRAINT_TOL

    def cons_jac(k):
        return problem.eval_constraints(np.clip(k, -1, 1)).jacobian

    best = {"k": None, "cost": np.inf}

    def consider(k):
        k = np.clip(k, -1.0, 1.0)
        blk = problem.eval_constraints(k)
        if blk.values.size == 0 or blk.values.min() > 0:
            c = problem.cost_value(k)[0]
            if c < best["cost"]:
                best.update(k=k.copy(), cost=c, margin=blk.min_margin())

    def callback(k, *args):
        if budget.time_limit is not None and time.perf_counter() - t0 > budget.time_limit:
            raise _OutOfTime

    consider(k0)
    iterations, message = 0, ""
    constraints = []
    if problem.n_constraints:
        constraints = [{"type": "ineq", "fun": cons, "jac": cons_jac}]
    try:
        res = minimize(fun, k0, jac=True, method="SLSQP", bounds=[(-1.0, 1.0)] * n,
                       constraints=constraints, callback=callback,
                       options={"maxiter": budget.max_iters, "ftol": 1e-10})
        iterations, message = int(res.nit), str(res.message)
        consider(res.x)
    except _OutOfTime:
        message = "time limit"
    solve_ms = (time.perf_counter() - t0) * 1e3
    out = PlanOutcome(None, iterations=iterations, solve_ms=solve_ms,
                      constraint_eval_ms=problem.eval_seconds * 1e3,
                      n_constraints=problem.n_constraints, message=message)
    if best["k"] is not None:
        out.k = best["k"]
        out.cost = float(best["cost"])
        out.min_margin = float(best["margin"])
    return out


# -- receding horizon -------------------------------------------------------------

@dataclass(frozen=True)
class PlannerConfig:
    n_t: int = DEFAULT_N_T
    n_s: int = DEFAULT_N_S
    a_max: float = DEFAULT_A_MAX
    t_plan: float = DEFAULT_T_PLAN
    t_fin: float = DEFAULT_T_FIN
    max_iters: int = 150
    goal_tol: float = GOAL_TOL
    cost: CostSpec = field(default_factory=CostSpec)
    budget: SolverBudget = field(default_factory=SolverBudget)
    max_degree: int | None = DEFAULT_MAX_DEGREE


@dataclass(frozen=True)
class ExecutedPiece:
    """Part [t0, t1] (local time) of the trajectory with parameters k from
    state (q0, qd0)."""
    q0: np.ndarray
    qd0: np.ndarray
    k: np.ndarray
    t0: float
    t1: float

    def to_document(self):
        return {"q0": self.q0.tolist(), "qd0": self.qd0.tolist(), "k": self.k.tolist(),
                "t0": self.t0, "t1": self.t1}


@dataclass
class PlanReport:
    status: str  # "success" | "safe-stop" | "failure"
    iterations: list
    pieces: list
    final_q: np.ndarray
    config: PlannerConfig

    EXIT_CODES = {"success": 0, "safe-stop": 2, "failure": 3}

    @property
    def exit_code(self) -> int:
        return self.EXIT_CODES[self.status]

    def family(self, piece: ExecutedPiece) -> TrajectoryFamily:
        c = self.config
        return TrajectoryFamily(piece.q0, piece.qd0, c.t_plan, c.t_fin, c.a_max)

    def sample(self, dt: float = 1e-3):
        """Executed motion sampled at most ``dt`` apart: times and configurations."""
        ts, qs = [], []
        t_abs = 0.0
        for piece in self.pieces:
            # spacing at most dt, both ends included
            n = max(int(np.ceil((piece.t1 - piece.t0) / dt - 1e-9)), 1)
            local = np.linspace(piece.t0, piece.t1, n + 1)
            if ts:
                local = local[1:]  # shared with the end of the previous piece
            q, _ = eval_trajectory(self.family(piece), piece.k, local)
            ts.append(t_abs + local - piece.t0)
            qs.append(q)
            t_abs += piece.t1 - piece.t0
        if not ts:
            return np.zeros(1), self.final_q[None].copy()
        return np.concatenate(ts), np.concatenate(qs)

    def to_document(self, timings: bool = True) -> dict:
        its = []
        for it in self.iterations:
            d = dict(it)
            if not timings:
                d.pop("solve_ms", None)
                d.pop("constraint_eval_ms", None)
            its.append(d)
        return {"status": self.status, "exit_code": self.exit_code, "iterations": its,
                "pieces": [p.to_document() for p in self.pieces],
                "final_q": self.final_q.tolist()}

    def dump(self, path, timings: bool = True) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_document(timings), fh, indent=1)


def plan_receding_horizon(chain: KinematicChain, obstacles, start, goal,
                          config: PlannerConfig | None = None, log=None) -> PlanReport:
    """Plan-and-execute loop in simulated time.

    Each iteration solves from the state at t_plan of the previous plan,
    then commits that plan's first phase.  A failed solve executes the
    braking phase of the committed plan and the next solve starts from
    rest; two failures in a row (or a failure before anything was
    committed) end the episode.
    """
    cfg = config or PlannerConfig()
    q = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    if q.shape != (chain.n_q,) or goal.shape != (chain.n_q,):
        raise ValueError("start/goal length does not match the chain")
    qd = np.zeros_like(q)
    committed = None
    fails = 0
    iterations, pieces = [], []
    status = None

    def brake_tail(piece_state):
        q0, qd0, k = piece_state
        pieces.append(ExecutedPiece(q0, qd0, k, cfg.t_plan, cfg.t_fin))
        fam = TrajectoryFamily(q0, qd0, cfg.t_plan, cfg.t_fin, cfg.a_max)
        qe, _ = eval_trajectory(fam, k, cfg.t_fin)
        return qe

    if np.max(np.abs(q - goal)) < cfg.goal_tol:
        return PlanReport("success", [], [], q.copy(), cfg)

    for it in range(cfg.max_iters):
        fam = TrajectoryFamily(q, qd, cfg.t_plan, cfg.t_fin, cfg.a_max)
        problem = PlanningProblem(chain, fam, obstacles, goal, n_t=cfg.n_t, n_s=cfg.n_s,
                                  cost=cfg.cost, budget=cfg.budget, max_degree=cfg.max_degree)
        out = solve(problem, np.zeros(chain.n_q))
        iterations.append({
            "iter": it, "feasible": out.feasible,
            "k": out.k.tolist() if out.feasible else None,
            "solve_ms": out.solve_ms, "constraint_eval_ms": out.constraint_eval_ms,
            "min_margin": out.min_margin if out.feasible else None,
            "n_constraints": out.n_constraints, "solver_iters": out.iterations,
        })
        if log:
            log(f"iter {it}: feasible={out.feasible} rows={out.n_constraints} "
                f"solve={out.solve_ms:.0f}ms |q-goal|={np.max(np.abs(q - goal)):.3f}")
        if not out.feasible:
            fails += 1
            if committed is None:
                status = "failure"
                break
            q = brake_tail(committed)
            qd = np.zeros_like(q)
            committed = None
            if np.max(np.abs(q - goal)) < cfg.goal_tol:
                status = "success"
                break
            if fails >= 2:
                status = "failure"
                break
            continue
        fails = 0
        committed = (q, qd, out.k)
        pieces.append(ExecutedPiece(q, qd, out.k, 0.0, cfg.t_plan))
        # success means the committed plan comes to rest at the goal
        q_rest, _ = eval_trajectory(fam, out.k, cfg.t_fin)
        q, qd = eval_trajectory(fam, out.k, cfg.t_plan)
        if np.max(np.abs(q_rest - goal)) < cfg.goal_tol:
            status = "success"
            break
    else:
        status = "safe-stop"
    if committed is not None:
        q = brake_tail(committed)
    return PlanReport(status, iterations, pieces, q, cfg)

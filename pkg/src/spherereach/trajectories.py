"""Constant-acceleration-then-brake trajectory family and its PZ enclosures.

For t in [0, t_plan) the joint accelerates at a = a_max * k; on
[t_plan, t_fin] it decelerates linearly to rest:

    q(t) = q0 + qd0 t + a t^2 / 2                              t < t_plan
    q(t) = q(t_plan) + v (tau - tau^2 / (2 D))                 t >= t_plan

with v = qd0 + a t_plan, tau = t - t_plan and D = t_fin - t_plan.  Both
branches are polynomial in (t, k), so plugging t = t_c + h x into them
gives exact PZs in the time indeterminate x and the parameter k.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .pz import IndeterminateId, PolynomialZonotope, k_id, t_id

DEFAULT_A_MAX = np.pi / 24
DEFAULT_T_PLAN = 0.5
DEFAULT_T_FIN = 1.0
DEFAULT_N_T = 40

# The shared time indeterminate of a batched bundle; each batch member
# (segment) owns its own copy.
SEGMENT_TIME = t_id(0)


@dataclass(frozen=True)
class TrajectoryFamily:
    q0: np.ndarray
    qd0: np.ndarray
    t_plan: float = DEFAULT_T_PLAN
    t_fin: float = DEFAULT_T_FIN
    a_max: np.ndarray | float = DEFAULT_A_MAX

    def __post_init__(self):
        q0 = np.atleast_1d(np.asarray(self.q0, dtype=float))
        qd0 = np.atleast_1d(np.asarray(self.qd0, dtype=float))
        if q0.shape != qd0.shape:
            raise ValueError("q0 and qd0 differ in length")
        if not 0 < self.t_plan < self.t_fin:
            raise ValueError("need 0 < t_plan < t_fin")
        a = np.broadcast_to(np.asarray(self.a_max, dtype=float), q0.shape).copy()
        if np.any(a <= 0):
            raise ValueError("a_max must be positive")
        object.__setattr__(self, "q0", q0)
        object.__setattr__(self, "qd0", qd0)
        object.__setattr__(self, "a_max", a)

    @property
    def n_q(self) -> int:
        return self.q0.size


def eval_trajectory(fam: TrajectoryFamily, k, t):
    """Position and velocity at time(s) t.  ``t`` may be an array; results
    then have shape (len(t), n_q)."""
    k = np.asarray(k, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or np.any(t_arr > fam.t_fin):
        raise ValueError(f"t outside [0, {fam.t_fin}]")
    t_col = t_arr[..., None]
    a = fam.a_max * k
    tp, D = fam.t_plan, fam.t_fin - fam.t_plan
    q1 = fam.q0 + fam.qd0 * t_col + 0.5 * a * t_col ** 2
    qd1 = fam.qd0 + a * t_col
    v = fam.qd0 + a * tp
    qp = fam.q0 + fam.qd0 * tp + 0.5 * a * tp ** 2
    tau = t_col - tp
    q2 = qp + v * (tau - tau ** 2 / (2 * D))
    qd2 = v * (1.0 - tau / D)
    first = t_col < tp
    return np.where(first, q1, q2), np.where(first, qd1, qd2)


@dataclass(frozen=True)
class TimePartition:
    t_fin: float
    n_t: int
    intervals: tuple

    @property
    def dt(self) -> float:
        return self.t_fin / self.n_t

    def bounds(self, i: int):
        return i * self.dt, (i + 1) * self.dt


def make_time_partition(t_fin: float, n_t: int) -> TimePartition:
    """n_t equal time PZs over [0, t_fin], interval i with its own id t_i."""
    if n_t < 1:
        raise ValueError("n_t must be >= 1")
    dt = t_fin / n_t
    intervals = tuple(
        PolynomialZonotope((2 * i + 1) * dt / 2, np.array([dt / 2]), np.array([[1]]), [t_id(i)])
        for i in range(n_t))
    return TimePartition(float(t_fin), int(n_t), intervals)


@dataclass(frozen=True)
class TrajectoryPZBundle:
    """Position/velocity PZs for every (segment, joint).

    Segments are the time intervals, except that an interval straddling
    t_plan is cut in two there.  ``positions[j]`` is a PZ batched over
    segments in ids {SEGMENT_TIME, k_j}.
    """
    family: TrajectoryFamily
    partition: TimePartition
    seg_bounds: np.ndarray  # (S, 2)
    seg_interval: np.ndarray  # (S,) interval index of each segment
    positions: tuple
    velocities: tuple
    # raw coefficients (S, n_q, 3, 2): [time power, k power]
    pos_coef: np.ndarray = field(repr=False)
    vel_coef: np.ndarray = field(repr=False)

    @property
    def n_segments(self) -> int:
        return len(self.seg_interval)

    def position(self, s: int, j: int) -> PolynomialZonotope:
        return self.positions[j].instance(s, {SEGMENT_TIME: t_id(s)})

    def velocity(self, s: int, j: int) -> PolynomialZonotope:
        return self.velocities[j].instance(s, {SEGMENT_TIME: t_id(s)})


def _segments(fam: TrajectoryFamily, part: TimePartition):
    bounds, owner = [], []
    for i in range(part.n_t):
        lo, hi = part.bounds(i)
        if i == part.n_t - 1:
            hi = fam.t_fin
        if lo < fam.t_plan < hi and not np.isclose(fam.t_plan, lo) and not np.isclose(fam.t_plan, hi):
            bounds += [(lo, fam.t_plan), (fam.t_plan, hi)]
            owner += [i, i]
        else:
            bounds.append((lo, hi))
            owner.append(i)
    return np.array(bounds), np.array(owner)


def trajectory_coefficients(fam: TrajectoryFamily, seg_bounds):
    """Coefficients of q and qd as polynomials in (x, k) per segment and joint.

    Returns arrays P, V of shape (S, n_q, 3, 2) such that
    q = sum_{a,b} P[..., a, b] x^a k^b, likewise for qd.
    """
    lo, hi = seg_bounds[:, 0], seg_bounds[:, 1]
    tc = ((lo + hi) / 2)[:, None]
    h = ((hi - lo) / 2)[:, None]
    q0, qd0, A = fam.q0[None], fam.qd0[None], fam.a_max[None]
    tp, D = fam.t_plan, fam.t_fin - fam.t_plan
    S, n = len(lo), fam.n_q
    P = np.zeros((S, n, 3, 2))
    V = np.zeros((S, n, 3, 2))
    first = (((lo + hi) / 2) < tp)[:, None, None, None]

    # acceleration branch, t = tc + h x
    P1 = np.zeros_like(P)
    P1[..., 0, 0] = q0 + qd0 * tc
    P1[..., 1, 0] = qd0 * h
    P1[..., 0, 1] = 0.5 * A * tc ** 2
    P1[..., 1, 1] = A * tc * h
    P1[..., 2, 1] = 0.5 * A * h ** 2
    V1 = np.zeros_like(V)
    V1[..., 0, 0] = qd0
    V1[..., 0, 1] = A * tc
    V1[..., 1, 1] = A * h

    # braking branch, tau = tauc + h x
    tauc = tc - tp
    beta0 = tauc - tauc ** 2 / (2 * D)
    beta1 = h * (1 - tauc / D)
    beta2 = -h ** 2 / (2 * D)
    P2 = np.zeros_like(P)
    P2[..., 0, 0] = q0 + qd0 * tp + qd0 * beta0
    P2[..., 0, 1] = 0.5 * A * tp ** 2 + A * tp * beta0
    P2[..., 1, 0] = qd0 * beta1
    P2[..., 1, 1] = A * tp * beta1
    P2[..., 2, 0] = qd0 * beta2
    P2[..., 2, 1] = A * tp * beta2
    V2 = np.zeros_like(V)
    gamma0 = 1 - tauc / D
    gamma1 = -h / D
    V2[..., 0, 0] = qd0 * gamma0
    V2[..., 0, 1] = A * tp * gamma0
    V2[..., 1, 0] = qd0 * gamma1
    V2[..., 1, 1] = A * tp * gamma1

    return np.where(first, P1, P2), np.where(first, V1, V2)


_MONOS = [(a, b) for a in range(3) for b in range(2) if (a, b) != (0, 0)]


def _coef_to_pz(coef: np.ndarray, j: int) -> PolynomialZonotope:
    """coef: (S, 3, 2) for one joint -> batched scalar PZ in (SEGMENT_TIME, k_j)."""
    ids = sorted([k_id(j), SEGMENT_TIME])
    kpos, tpos = ids.index(k_id(j)), ids.index(SEGMENT_TIME)
    E = np.zeros((len(_MONOS), 2), dtype=np.int64)
    for n, (a, b) in enumerate(_MONOS):
        E[n, tpos], E[n, kpos] = a, b
    G = np.stack([coef[:, a, b] for a, b in _MONOS], axis=1)
    return PolynomialZonotope(coef[:, 0, 0], G, E, ids, batched=True)


def make_trajectory_pzs(fam: TrajectoryFamily, partition: TimePartition) -> TrajectoryPZBundle:
    bounds, owner = _segments(fam, partition)
    P, V = trajectory_coefficients(fam, bounds)
    positions = tuple(_coef_to_pz(P[:, j], j) for j in range(fam.n_q))
    velocities = tuple(_coef_to_pz(V[:, j], j) for j in range(fam.n_q))
    return TrajectoryPZBundle(fam, partition, bounds, owner, positions, velocities, P, V)


def export_trajectory(fam: TrajectoryFamily, k, rate_hz: float, t_end: float | None = None) -> list:
    """Sampled rows ``{t, q, qd}`` for plotting or external checking."""
    t_end = fam.t_fin if t_end is None else t_end
    n = int(np.floor(t_end * rate_hz + 1e-9)) + 1
    ts = np.arange(n) / rate_hz
    q, qd = eval_trajectory(fam, k, ts)
    return [{"t": float(t), "q": qi.tolist(), "qd": qdi.tolist()} for t, qi, qdi in zip(ts, q, qd)]


def dump_trajectory(rows: list, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rows, fh)

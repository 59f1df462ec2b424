"""Sphere-based reachable sets of the arm.

SJO: for each joint frame j and time segment i, a ball whose center is a
polynomial in the trajectory parameters k alone and whose radius is the
joint sphere radius inflated by a bound on everything else.

SFO: n_s balls per link (two endpoint SJO balls plus n_s - 2 interior ones)
whose union covers the tapered capsule between the two SJO balls.

Also: the tapered capsule itself (for sampling and ground-truth checks) and
the box-link PZ occupancy used as a conservativeness baseline.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .kinematics import KinematicChain, pzfk
from .pz import PolynomialZonotope, k_id, matmul
from .trajectories import TrajectoryPZBundle

DEFAULT_N_S = 5
DEFAULT_MAX_DEGREE = 2


# -- compiled polynomials in k -----------------------------------------------------

class KPolynomialMap:
    """Vector polynomials in k for many (segment, frame) pairs at once.

    value[s, f] = c[s, f] + sum_m G[s, f, m] * prod_l k_l ** E[m, l]
    """

    def __init__(self, c: np.ndarray, G: np.ndarray, E: np.ndarray):
        self.c = c  # (S, F, 3)
        self.G = G  # (S, F, M, 3)
        self.E = np.asarray(E, dtype=np.int64)  # (M, n_q)
        self.n_q = self.E.shape[1]
        self.max_deg = int(self.E.max()) if self.E.size else 0

    @classmethod
    def from_pzs(cls, pzs: Sequence[PolynomialZonotope], n_q: int, n_segments: int):
        ids = [k_id(j) for j in range(n_q)]
        rows, Es = {}, []
        parts = []
        for P in pzs:
            c, G, E = P.polynomial(ids)
            idx = []
            for e in map(tuple, E):
                if e not in rows:
                    rows[e] = len(rows)
                    Es.append(e)
                idx.append(rows[e])
            parts.append((np.broadcast_to(c, (n_segments, 3)),
                          np.broadcast_to(G, (n_segments,) + G.shape[1:]), idx))
        M = len(rows)
        S, F = n_segments, len(pzs)
        cc = np.zeros((S, F, 3))
        GG = np.zeros((S, F, M, 3))
        for f, (c, G, idx) in enumerate(parts):
            cc[:, f] = c
            if idx:
                np.add.at(GG[:, f], (slice(None), np.array(idx)), G)
        E = np.array(Es, dtype=np.int64).reshape(M, n_q)
        return cls(cc, GG, E)

    def _powers(self, k):
        d = max(self.max_deg, 1)
        return k[:, None] ** np.arange(d + 1)[None, :]  # (n_q, d+1)

    def monomials(self, k, with_jac: bool = False):
        k = np.asarray(k, dtype=float)
        M = self.E.shape[0]
        pw = self._powers(k)
        cols = np.arange(self.n_q)
        factors = pw[cols[None, :], self.E]  # (M, n_q)
        mono = factors.prod(axis=1)
        if not with_jac:
            return mono
        Em1 = np.maximum(self.E - 1, 0)
        dfac = self.E * pw[cols[None, :], Em1]
        dmono = np.empty((M, self.n_q))
        for l in range(self.n_q):
            f = factors.copy()
            f[:, l] = dfac[:, l]
            dmono[:, l] = f.prod(axis=1)
        return mono, dmono

    def __call__(self, k, with_jac: bool = False):
        if not with_jac:
            mono = self.monomials(k)
            return self.c + np.einsum("sfmx,m->sfx", self.G, mono)
        mono, dmono = self.monomials(k, True)
        val = self.c + np.einsum("sfmx,m->sfx", self.G, mono)
        jac = np.einsum("sfmx,mq->sfxq", self.G, dmono)
        return val, jac

    def evaluate_many(self, K, seg):
        """Values for many (k, segment) pairs: K (N, n_q), seg (N,) -> (N, F, 3)."""
        K = np.atleast_2d(np.asarray(K, dtype=float))
        mono = np.ones((len(K), self.E.shape[0]))
        for l in range(self.n_q):
            mono *= K[:, l:l + 1] ** self.E[None, :, l]
        return self.c[seg] + np.einsum("nfmx,nm->nfx", self.G[seg], mono)

    def bounds(self):
        """Per-(segment, frame) box over all k in [-1, 1]^n_q: (lo, hi)."""
        rad = np.abs(self.G).sum(axis=2)
        return self.c - rad, self.c + rad


# -- spherical joint occupancy -------------------------------------------------------

@dataclass(frozen=True)
class SjoEntry:
    j: int
    i: int
    center_pz: PolynomialZonotope
    radius: float


class SjoSet(Sequence):
    """All SJO entries of one planning iteration.

    Iterating yields :class:`SjoEntry` ordered by (segment, joint).  The
    batched form (``centers``, ``radii``, ``poly``) is what the planner uses.
    """

    def __init__(self, chain: KinematicChain, bundle: TrajectoryPZBundle, centers, radii, u_axes):
        self.chain = chain
        self.bundle = bundle
        self.centers = tuple(centers)  # per frame: batched vector PZ in k ids
        self.radii = np.asarray(radii)  # (S, F)
        self.u_axes = np.asarray(u_axes)  # (S, F, 3)
        self.n_segments = self.radii.shape[0]
        self.n_frames = self.radii.shape[1]
        self.poly = KPolynomialMap.from_pzs(self.centers, chain.n_q, self.n_segments)

    def __len__(self):
        return self.n_segments * self.n_frames

    def __getitem__(self, n):
        if not -len(self) <= n < len(self):
            raise IndexError(n)
        s, j = divmod(n % len(self), self.n_frames)
        return self.entry(s, j)

    def entry(self, s: int, j: int) -> SjoEntry:
        P = self.centers[j]
        if P.batched:
            P = P.instance(s)
        return SjoEntry(j, s, P, float(self.radii[s, j]))


def build_sjo(chain: KinematicChain, bundle: TrajectoryPZBundle, order: int = 4,
              max_degree: int | None = DEFAULT_MAX_DEGREE) -> SjoSet:
    if bundle.family.n_q != chain.n_q:
        raise ValueError("chain and trajectory bundle disagree on n_q")
    keep = [k_id(j) for j in range(chain.n_q)]
    frames = pzfk(chain, list(bundle.positions), order=order, keep_ids=keep,
                  max_degree=max_degree)
    S = bundle.n_segments
    centers, radii, u_axes = [], [], []
    for j, fr in enumerate(frames):
        C, U = fr.position.split_dependent(keep)
        u = np.broadcast_to(U.radius_array(), (S, 3))
        centers.append(C)
        u_axes.append(u)
        radii.append(chain.radii[j] + np.linalg.norm(u, axis=-1))
    return SjoSet(chain, bundle, centers, np.stack(radii, axis=1), np.stack(u_axes, axis=1))


def slice_sjo(entry: SjoEntry, k):
    k = np.asarray(k, dtype=float)
    if np.any(np.abs(k) > 1.0):
        raise ValueError("k outside [-1, 1]")
    P = entry.center_pz.slice_many({k_id(j): kj for j, kj in enumerate(k)})
    if P.n_dep or P.n_indep:
        raise ValueError("center PZ has ids other than k")
    return P.center.copy(), entry.radius


# -- spherical forward occupancy ------------------------------------------------------

@dataclass(frozen=True)
class SfoSphere:
    j: int
    i: int
    m: int
    center: np.ndarray
    radius: float


def interior_fractions(n_s: int) -> np.ndarray:
    m = np.arange(1, n_s - 1)
    return (2 * m - 1) / (2 * (n_s - 2))


def sfo_interior(CA, rA, CB, rB, n_s: int, dCA=None, dCB=None):
    """Interior SFO balls between balls (CA, rA) and (CB, rB).

    Shapes broadcast over leading axes: CA, CB (..., 3), rA, rB (...).
    Returns centers (..., n_s-2, 3) and radii (..., n_s-2); with the
    optional center jacobians dCA, dCB (..., 3, n) also returns their
    jacobians (..., n_s-2, 3, n) and (..., n_s-2, n).
    """
    if n_s < 3:
        raise ValueError("n_s must be >= 3")
    CA, CB = np.asarray(CA, dtype=float), np.asarray(CB, dtype=float)
    rA, rB = np.asarray(rA, dtype=float), np.asarray(rB, dtype=float)
    f = interior_fractions(n_s)
    den = 2.0 * (n_s - 2)
    D = CB - CA
    centers = CA[..., None, :] + f[:, None] * D[..., None, :]
    s2 = (D * D).sum(-1) / den ** 2
    delta2 = ((rB - rA) / den) ** 2
    ell = rA[..., None] + f * (rB - rA)[..., None]
    sp2 = s2 - delta2
    ok = sp2 >= 0
    radii = np.where(ok[..., None], np.sqrt(ell ** 2 + np.maximum(sp2, 0.0)[..., None]),
                     np.maximum(rA, rB)[..., None])
    if dCA is None:
        return centers, radii
    dD = dCB - dCA
    dcent = dCA[..., None, :, :] + f[:, None, None] * dD[..., None, :, :]
    ds2 = 2.0 * np.einsum("...x,...xn->...n", D, dD) / den ** 2
    safe = np.where(radii > 0, radii, 1.0)
    drad = np.where(ok[..., None, None], 0.5 * ds2[..., None, :] / safe[..., None], 0.0)
    return centers, radii, dcent, drad


def build_sfo(sphere_j, sphere_j1, n_s: int = DEFAULT_N_S, j: int = 0, i: int = 0) -> list:
    """n_s balls covering the tapered capsule between two balls.

    ``sphere_j`` and ``sphere_j1`` are (center, radius) pairs, e.g. the
    output of :func:`slice_sjo`.
    """
    if n_s < 3:
        raise ValueError("n_s must be >= 3")
    (cA, rA), (cB, rB) = sphere_j, sphere_j1
    cA, cB = np.asarray(cA, dtype=float), np.asarray(cB, dtype=float)
    cent, rad = sfo_interior(cA, rA, cB, rB, n_s)
    out = [SfoSphere(j, i, 1, cA.copy(), float(rA))]
    out += [SfoSphere(j, i, m + 2, cent[m], float(rad[m])) for m in range(n_s - 2)]
    out.append(SfoSphere(j, i, n_s, cB.copy(), float(rB)))
    return out


def sfo_for_k(sjo: SjoSet, k, n_s: int = DEFAULT_N_S) -> list:
    """Every SFO ball for a concrete k, ordered by (i, j, m)."""
    C = sjo.poly(k)
    R = sjo.radii
    out = []
    for s in range(sjo.n_segments):
        for j in range(sjo.n_frames - 1):
            out += build_sfo((C[s, j], R[s, j]), (C[s, j + 1], R[s, j + 1]), n_s, j, s)
    return out


def sfo_document(spheres: Sequence[SfoSphere]) -> list:
    return [{"j": sp.j, "i": sp.i, "m": sp.m, "center": [float(x) for x in sp.center],
             "radius": float(sp.radius)} for sp in spheres]


def dump_sfo(spheres: Sequence[SfoSphere], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(sfo_document(spheres), fh)


# -- tapered capsules --------------------------------------------------------------

@dataclass(frozen=True)
class TaperedCapsule:
    """Convex hull of two balls.  It equals the union of the balls
    B(c(lam), r(lam)) with center and radius interpolated linearly."""
    c0: np.ndarray
    r0: float
    c1: np.ndarray
    r1: float

    def __post_init__(self):
        if not (self.r0 > 0 and self.r1 > 0):
            raise ValueError("capsule radii must be positive")
        object.__setattr__(self, "c0", np.asarray(self.c0, dtype=float))
        object.__setattr__(self, "c1", np.asarray(self.c1, dtype=float))

    def axis_spheres(self, n: int):
        lam = np.linspace(0.0, 1.0, n)
        return (self.c0 + lam[:, None] * (self.c1 - self.c0),
                self.r0 + lam * (self.r1 - self.r0))

    def sample_interior(self, n: int, rng) -> np.ndarray:
        lam = rng.uniform(0.0, 1.0, n)
        c = self.c0 + lam[:, None] * (self.c1 - self.c0)
        r = self.r0 + lam * (self.r1 - self.r0)
        d = rng.normal(size=(n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return c + d * (r * rng.uniform(0.0, 1.0, n) ** (1 / 3))[:, None]

    def sample_surface(self, n: int, rng) -> np.ndarray:
        """Boundary points as support points in random directions."""
        u = rng.normal(size=(n, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        h0 = u @ self.c0 + self.r0
        h1 = u @ self.c1 + self.r1
        use0 = (h0 >= h1)[:, None]
        return np.where(use0, self.c0 + self.r0 * u, self.c1 + self.r1 * u)

    def distance(self, x) -> np.ndarray:
        """Signed distance-like value min_lam ||x - c(lam)|| - r(lam)
        (negative inside), by golden-section search on a convex function."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        d = self.c1 - self.c0
        dr = self.r1 - self.r0

        def f(lam):
            return np.linalg.norm(x - (self.c0 + lam[:, None] * d), axis=1) - (self.r0 + lam * dr)

        a, b = np.zeros(len(x)), np.ones(len(x))
        g = (np.sqrt(5) - 1) / 2
        for _ in range(80):
            c1 = b - g * (b - a)
            c2 = a + g * (b - a)
            left = f(c1) <= f(c2)
            b = np.where(left, c2, b)
            a = np.where(left, a, c1)
        return np.minimum(np.minimum(f(np.zeros(len(x))), f(np.ones(len(x)))), f((a + b) / 2))


def spheres_contain(points, centers, radii, slack: float = 1e-9) -> np.ndarray:
    """Which points lie in the union of the balls."""
    points = np.atleast_2d(points)
    d = np.linalg.norm(points[:, None, :] - np.asarray(centers)[None], axis=-1)
    return np.any(d <= np.asarray(radii)[None] + slack, axis=1)


# -- box-link PZ occupancy (baseline) ------------------------------------------------------

def default_link_boxes(chain: KinematicChain) -> list:
    """Axis-aligned boxes in frame j that contain link j's capsule."""
    boxes = []
    offs = chain.offsets
    radii = chain.radii
    for j in range(chain.n_links):
        o = offs[j + 1]
        r = max(radii[j], radii[j + 1])
        boxes.append((o / 2.0, np.abs(o) / 2.0 + r))
    return boxes


def build_pz_link_occupancy(chain: KinematicChain, frames, link_boxes=None) -> list:
    """Per link, the PZ p_j + R_j L_j (batched over segments like ``frames``).

    The box L_j is given as (center, half_widths) in frame j.
    """
    if link_boxes is None:
        link_boxes = default_link_boxes(chain)
    out = []
    for j, (c, hw) in enumerate(link_boxes):
        c, hw = np.asarray(c, dtype=float), np.asarray(hw, dtype=float)
        L = PolynomialZonotope(c, H=np.diag(hw)) if np.any(hw > 0) else PolynomialZonotope(c)
        out.append(frames[j].position + matmul(frames[j].rotation, L))
    return out


def interval_hull(P: PolynomialZonotope):
    return P.inf(), P.sup()


def sfo_balls_for_link(sjo: SjoSet, k, s: int, j: int, n_s: int = DEFAULT_N_S):
    C = sjo.poly(k)
    balls = build_sfo((C[s, j], sjo.radii[s, j]), (C[s, j + 1], sjo.radii[s, j + 1]), n_s, j, s)
    return np.array([b.center for b in balls]), np.array([b.radius for b in balls])


__all__ = [
    "DEFAULT_N_S", "KPolynomialMap", "SjoEntry", "SjoSet", "build_sjo", "slice_sjo",
    "SfoSphere", "interior_fractions", "sfo_interior", "build_sfo", "sfo_for_k",
    "sfo_document", "dump_sfo", "TaperedCapsule", "spheres_contain", "default_link_boxes",
    "build_pz_link_occupancy", "interval_hull", "sfo_balls_for_link",
]

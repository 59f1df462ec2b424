"""3D obstacle zonotopes and their exact signed distance.

An obstacle is a full-dimensional zonotope {c + G sigma : sigma in [-1,1]^m}.
Its vertices come from sign combinations of the generators, and facets and
edges from the convex hull of those vertices.  The signed distance to a
point c has three cases, tried in order:

  inside:  max(A c - b) <= 0, the value is that maximum
  face:    the first row i with A_i c - b_i >= 0 whose projection onto the
           facet plane lies in the zonotope, the value is that row
  edge:    otherwise the smallest distance to a hull edge (segments clamp,
           so vertices are covered)
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import lsq_linear
from scipy.spatial import ConvexHull

from .jsonio import read_document

MAX_GENERATORS = 16
DEDUP_TOL = 1e-10
FACE_TOL = 1e-10

CASE_INSIDE, CASE_FACE, CASE_EDGE = 0, 1, 2
CASE_NAMES = ("inside", "face", "edge")


class DegenerateZonotope(ValueError):
    pass


def enumerate_vertices(center, generators) -> np.ndarray:
    """Extreme points of the zonotope, deduplicated."""
    c = np.asarray(center, dtype=float).reshape(3)
    G = np.asarray(generators, dtype=float).reshape(-1, 3)
    if len(G) > MAX_GENERATORS:
        raise ValueError(f"{len(G)} generators exceeds the limit of {MAX_GENERATORS}")
    if len(G) < 3 or np.linalg.matrix_rank(G, tol=1e-9) < 3:
        raise DegenerateZonotope("generators must span R^3")
    signs = np.array(list(itertools.product((-1.0, 1.0), repeat=len(G))))
    pts = c + signs @ G
    hull = ConvexHull(pts)
    V = pts[hull.vertices]
    return _dedup(V)


def _dedup(V: np.ndarray) -> np.ndarray:
    keep = []
    for v in V:
        if not any(np.max(np.abs(v - w)) <= DEDUP_TOL for w in keep):
            keep.append(v)
    V = np.array(keep)
    order = np.lexsort(V.T[::-1])
    return V[order]


def enumerate_facets_edges(V):
    """Unit outward halfspaces (A, b) and hull edges E (pairs into V)."""
    V = np.asarray(V, dtype=float)
    try:
        hull = ConvexHull(V)
    except Exception as exc:  # scipy raises QhullError
        raise DegenerateZonotope(f"degenerate hull: {exc}") from None
    eq = hull.equations
    A_raw = eq[:, :3]
    b_raw = -eq[:, 3]
    nrm = np.linalg.norm(A_raw, axis=1)
    A_raw, b_raw = A_raw / nrm[:, None], b_raw / nrm
    # triangulated facets repeat the same plane; merge them
    A, b = [], []
    for a, bb in zip(A_raw, b_raw):
        if not any(np.max(np.abs(a - a2)) < 1e-9 and abs(bb - b2) < 1e-9 for a2, b2 in zip(A, b)):
            A.append(a)
            b.append(bb)
    order = np.lexsort(np.array(A).T[::-1])
    A = np.array(A)[order]
    b = np.array(b)[order]
    # vertex-facet incidence: an edge joins two vertices sharing two facets
    scale = max(1.0, np.abs(V).max())
    on = np.abs(V @ A.T - b) <= 1e-9 * scale
    E = []
    for u, v in itertools.combinations(range(len(V)), 2):
        shared = np.nonzero(on[u] & on[v])[0]
        if len(shared) >= 2:
            E.append((u, v))
    return A, b, np.array(E, dtype=np.int64).reshape(-1, 2)


@dataclass(frozen=True)
class ObstacleSolid:
    center: np.ndarray
    generators: np.ndarray
    V: np.ndarray = field(init=False, repr=False)
    A: np.ndarray = field(init=False, repr=False)
    b: np.ndarray = field(init=False, repr=False)
    E: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(3)
        G = np.asarray(self.generators, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "generators", G)
        V = enumerate_vertices(c, G)
        A, b, E = enumerate_facets_edges(V)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "E", E)

    @classmethod
    def box(cls, center, half_widths):
        return cls(center, np.diag(np.asarray(half_widths, dtype=float)))

    def bounding_radius(self) -> float:
        return float(np.linalg.norm(self.V - self.center, axis=1).max())

    def contains(self, x, tol: float = 0.0) -> np.ndarray:
        x = np.atleast_2d(x)
        return (x @ self.A.T - self.b).max(axis=1) <= tol

    def to_document(self) -> dict:
        return {"center": self.center.tolist(), "generators": self.generators.tolist()}

    def sdf(self, c) -> float:
        return sdf(self, c)


def load_obstacle(document) -> ObstacleSolid:
    document = read_document(document)
    if "center" not in document:
        raise ValueError("obstacle needs a 'center'")
    c = [float(x) for x in document["center"]]
    if len(c) != 3:
        raise ValueError("obstacle center must have 3 entries")
    if "generators" in document:
        G = np.array([[float(x) for x in g] for g in document["generators"]])
        if G.ndim != 2 or G.shape[1] != 3:
            raise ValueError("obstacle generators must be 3-vectors")
        return ObstacleSolid(c, G)
    if "half_widths" in document:
        hw = [float(x) for x in document["half_widths"]]
        if len(hw) != 3 or min(hw) <= 0:
            raise ValueError("half_widths must be 3 positive numbers")
        return ObstacleSolid.box(c, hw)
    raise ValueError("obstacle needs 'generators' or 'half_widths'")


# -- distances -----------------------------------------------------------------

def point_segment_distance(c, v0, v1) -> float:
    c, v0, v1 = (np.asarray(x, dtype=float) for x in (c, v0, v1))
    d = v1 - v0
    dd = d @ d
    lam = 0.0 if dd == 0 else np.clip((c - v0) @ d / dd, 0.0, 1.0)
    return float(np.linalg.norm(c - (v0 + lam * d)))


def _edge_nearest(obs: ObstacleSolid, C: np.ndarray):
    """Nearest points on hull edges for many points: (dist (P,), point (P,3))."""
    v0 = obs.V[obs.E[:, 0]]  # (ne, 3)
    d = obs.V[obs.E[:, 1]] - v0
    dd = (d * d).sum(1)
    w = C[:, None, :] - v0[None]  # (P, ne, 3)
    lam = np.clip((w * d[None]).sum(-1) / dd[None], 0.0, 1.0)
    near = v0[None] + lam[..., None] * d[None]
    dist = np.linalg.norm(C[:, None, :] - near, axis=-1)
    best = dist.argmin(axis=1)
    idx = np.arange(len(C))
    return dist[idx, best], near[idx, best]


def sdf_batch(obs: ObstacleSolid, C, with_grad: bool = False):
    """Signed distance for points C (P, 3).

    Returns values (P,), case labels (P,) and, with ``with_grad``, the
    gradients (P, 3).
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    P = len(C)
    A, b = obs.A, obs.b
    D = C @ A.T - b  # (P, nf)
    mx = D.max(axis=1)
    imax = D.argmax(axis=1)  # first max: lowest row index on ties
    val = np.empty(P)
    case = np.full(P, CASE_EDGE)
    grad = np.empty((P, 3)) if with_grad else None

    inside = mx <= 0
    val[inside] = mx[inside]
    case[inside] = CASE_INSIDE
    if with_grad:
        grad[inside] = A[imax[inside]]

    out = np.nonzero(~inside)[0]
    if len(out):
        Co, Do = C[out], D[out]
        # projections onto every facet plane: (Po, nf, 3)
        proj = Co[:, None, :] - Do[..., None] * A[None]
        feas = ((proj @ A.T - b).max(axis=-1) <= FACE_TOL) & (Do >= 0)
        has = feas.any(axis=1)
        first = feas.argmax(axis=1)
        fi = out[has]
        val[fi] = Do[has, first[has]]
        case[fi] = CASE_FACE
        if with_grad:
            grad[fi] = A[first[has]]
        ei = out[~has]
        if len(ei):
            dist, near = _edge_nearest(obs, C[ei])
            val[ei] = dist
            if with_grad:
                diff = C[ei] - near
                grad[ei] = diff / np.maximum(dist, 1e-300)[:, None]
    if with_grad:
        return val, case, grad
    return val, case


def sdf(obs: ObstacleSolid, c) -> float:
    v, _ = sdf_batch(obs, np.asarray(c, dtype=float)[None])
    return float(v[0])


def sdf_gradient(obs: ObstacleSolid, c) -> np.ndarray:
    _, _, g = sdf_batch(obs, np.asarray(c, dtype=float)[None], with_grad=True)
    return g[0]


def sdf_case(obs: ObstacleSolid, c) -> str:
    _, case = sdf_batch(obs, np.asarray(c, dtype=float)[None])
    return CASE_NAMES[case[0]]


# -- independent oracle --------------------------------------------------------------

def projection_oracle(obs: ObstacleSolid, c) -> float:
    """Signed distance via a bounded least-squares solve over the
    generator coefficients: min ||center + G^T s - c|| with s in [-1, 1]^m.
    Inside points get max(A c - b), which is exact for a polytope with
    unit-norm rows."""
    c = np.asarray(c, dtype=float)
    inner = float((obs.A @ c - obs.b).max())
    if inner <= 0:
        return inner
    res = lsq_linear(obs.generators.T, c - obs.center, bounds=(-1.0, 1.0),
                     method="bvls", tol=1e-15, lsmr_tol=None)
    return float(np.linalg.norm(obs.generators.T @ res.x - (c - obs.center)))


def cross_product_facets(obs: ObstacleSolid):
    """Facet halfspaces from pairwise generator cross products, for
    checking the hull-based ones.  Parallel pairs are skipped."""
    G = obs.generators
    rows = []
    for i, j in itertools.combinations(range(len(G)), 2):
        n = np.cross(G[i], G[j])
        nn = np.linalg.norm(n)
        if nn < 1e-12:
            continue
        n = n / nn
        for sgn in (1.0, -1.0):
            a = sgn * n
            rows.append((a, a @ obs.center + np.abs(G @ a).sum()))
    return rows

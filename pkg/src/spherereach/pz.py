"""Polynomial zonotopes over named indeterminates.

A polynomial zonotope (PZ) is the set

    { c + sum_i G_i * prod_l x_l ** E[i, l] + sum_j H_j * y_j  |  x, y in [-1, 1] }

where the ``x`` are named (dependent) indeterminates shared between PZs and
the ``y`` are anonymous independent ones.  Values may be scalars, vectors or
matrices.

Every PZ carries a leading *batch* axis.  A batched PZ is a stack of PZs that
share one exponent structure but have their own coefficients; batch members
are separate sets and their indeterminates are separate too, even though the
ids are spelled the same.  This is how one PZ expression is evaluated over all
time intervals at once.  Unbatched PZs have batch size 1 and hide the axis.
"""
from __future__ import annotations

import math
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

ZERO_TOL = 1e-12

K = "k"  # trajectory parameter
TIME = "t"  # time interval
ERR = "y"  # reserved for error terms promoted to named ids


class IndeterminateId(NamedTuple):
    kind: str
    index: int

    def __repr__(self) -> str:
        return f"{self.kind}{self.index}"


def k_id(j: int) -> IndeterminateId:
    return IndeterminateId(K, j)


def t_id(i: int) -> IndeterminateId:
    return IndeterminateId(TIME, i)


class ShapeError(ValueError):
    pass


def _as_batched(a, batched: bool) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if not batched:
        a = a[None]
    return a


class PolynomialZonotope:
    """Immutable polynomial zonotope, see module docstring.

    Internal arrays:
      center: (B, *S)
      G:      (B, n_g, *S)  dependent generators
      E:      (n_g, n_ids)  nonnegative integer exponents
      ids:    tuple of IndeterminateId labelling the columns of E (sorted)
      H:      (B, n_h, *S)  independent generators
    """

    __slots__ = ("center_", "G", "E", "ids", "H", "batched")

    def __init__(self, center, G=None, E=None, ids: Sequence[IndeterminateId] = (),
                 H=None, batched: bool = False, compact: bool = True):
        c = _as_batched(center, batched)
        B, S = c.shape[0], c.shape[1:]
        ids = tuple(ids)
        if G is None:
            G = np.zeros((B, 0) + S)
            E = np.zeros((0, len(ids)), dtype=np.int64)
        else:
            G = _as_batched(G, batched)
            E = np.asarray(E, dtype=np.int64).reshape(G.shape[1], len(ids))
        if H is None:
            H = np.zeros((B, 0) + S)
        else:
            H = _as_batched(H, batched)
        if G.shape[2:] != S or H.shape[2:] != S:
            raise ShapeError(f"generator shape {G.shape[2:]} / {H.shape[2:]} != center shape {S}")
        if G.shape[0] != B and G.shape[0] == 1:
            G = np.broadcast_to(G, (B,) + G.shape[1:])
        if H.shape[0] != B and H.shape[0] == 1:
            H = np.broadcast_to(H, (B,) + H.shape[1:])
        if G.shape[0] != B or H.shape[0] != B:
            raise ShapeError("batch size mismatch")
        if E.size and E.min() < 0:
            raise ValueError("exponents must be nonnegative")
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate ids {ids}")
        if list(ids) != sorted(ids):
            order = sorted(range(len(ids)), key=lambda n: ids[n])
            ids, E = tuple(ids[n] for n in order), E[:, order]
        self.center_ = c
        self.G = G
        self.E = E
        self.ids = ids
        self.H = H
        self.batched = batched
        if compact:
            self._compact_inplace()

    # -- construction helpers -------------------------------------------------
    @classmethod
    def point(cls, value, batched=False) -> "PolynomialZonotope":
        return cls(value, batched=batched)

    def _new(self, center, G, E, ids, H, batched=None, compact=True):
        obj = PolynomialZonotope.__new__(PolynomialZonotope)
        obj.center_ = center
        obj.G = G
        obj.E = np.asarray(E, dtype=np.int64)
        obj.ids = tuple(ids)
        obj.H = H
        obj.batched = self.batched if batched is None else batched
        if compact:
            obj._compact_inplace()
        return obj

    def _compact_inplace(self) -> None:
        G, E, ids, c = self.G, self.E, self.ids, self.center_
        B, S = c.shape[0], c.shape[1:]
        F = int(np.prod(S)) if S else 1
        if G.shape[1]:
            uniq, inv = np.unique(E, axis=0, return_inverse=True)
            inv = inv.reshape(-1)
            if uniq.shape[0] != E.shape[0]:
                onehot = np.zeros((uniq.shape[0], E.shape[0]))
                onehot[inv, np.arange(E.shape[0])] = 1.0
                G = (onehot @ G.reshape(B, E.shape[0], F)).reshape((B, uniq.shape[0]) + S)
            else:
                G = G[:, np.argsort(inv)] if np.any(inv != np.arange(len(inv))) else G
            E = uniq
            const = np.all(E == 0, axis=1)
            if const.any():
                c = c + G[:, const].sum(axis=1)
                G, E = G[:, ~const], E[~const]
            norms = np.sqrt((G.reshape(B, G.shape[1], F) ** 2).sum(axis=(0, 2)))
            keep = norms >= ZERO_TOL
            if not keep.all():
                G, E = G[:, keep], E[keep]
        used = np.any(E != 0, axis=0) if E.shape[0] else np.zeros(len(ids), dtype=bool)
        if not used.all():
            E = E[:, used]
            ids = tuple(i for i, u in zip(ids, used) if u)
        H = self.H
        if H.shape[1]:
            hn = np.sqrt((H.reshape(B, H.shape[1], F) ** 2).sum(axis=(0, 2)))
            keep = hn >= ZERO_TOL
            if not keep.all():
                H = H[:, keep]
        self.center_, self.G, self.E, self.ids, self.H = c, G, E, ids, H

    def compact(self) -> "PolynomialZonotope":
        return self._new(self.center_.copy(), self.G.copy(), self.E.copy(), self.ids, self.H.copy())

    # -- views ----------------------------------------------------------------
    @property
    def batch_size(self) -> int:
        return self.center_.shape[0]

    @property
    def shape(self) -> tuple:
        return self.center_.shape[1:]

    @property
    def center(self) -> np.ndarray:
        return self.center_ if self.batched else self.center_[0]

    @property
    def dep_gens(self) -> np.ndarray:
        return self.G if self.batched else self.G[0]

    @property
    def indep_gens(self) -> np.ndarray:
        return self.H if self.batched else self.H[0]

    @property
    def n_dep(self) -> int:
        return self.G.shape[1]

    @property
    def n_indep(self) -> int:
        return self.H.shape[1]

    def exponent(self, row: int) -> dict:
        return {i: int(e) for i, e in zip(self.ids, self.E[row]) if e}

    def __repr__(self) -> str:
        b = f", batch={self.batch_size}" if self.batched else ""
        return (f"PolynomialZonotope(shape={self.shape}, n_dep={self.n_dep}, "
                f"n_indep={self.n_indep}, ids={self.ids}{b})")

    def instance(self, b: int, rename: Mapping[IndeterminateId, IndeterminateId] | None = None):
        """Pull batch member ``b`` out as an unbatched PZ, optionally renaming ids."""
        ids = self.ids
        E = self.E
        if rename:
            ids = [rename.get(i, i) for i in ids]
            order = sorted(range(len(ids)), key=lambda n: ids[n])
            ids = [ids[n] for n in order]
            E = E[:, order]
        return PolynomialZonotope(self.center_[b], self.G[b], E, ids, self.H[b])

    # -- id bookkeeping -------------------------------------------------------
    def _expanded_E(self, ids: Sequence[IndeterminateId]) -> np.ndarray:
        if tuple(ids) == self.ids:
            return self.E
        out = np.zeros((self.E.shape[0], len(ids)), dtype=np.int64)
        pos = {i: n for n, i in enumerate(ids)}
        for col, i in enumerate(self.ids):
            out[:, pos[i]] = self.E[:, col]
        return out

    # -- arithmetic -----------------------------------------------------------
    def _coerce(self, other) -> "PolynomialZonotope":
        if isinstance(other, PolynomialZonotope):
            return other
        return PolynomialZonotope(other)

    def __add__(self, other) -> "PolynomialZonotope":
        """Minkowski sum.  Shared ids stay shared, so this is also exact
        polynomial addition for PZs built from common indeterminates."""
        if not isinstance(other, PolynomialZonotope):
            other = np.asarray(other, dtype=float)
            return self._new(self.center_ + other, self.G, self.E, self.ids, self.H, compact=False)
        if self.shape != other.shape:
            raise ShapeError(f"cannot add shapes {self.shape} and {other.shape}")
        ids = tuple(sorted(set(self.ids) | set(other.ids)))
        B = max(self.batch_size, other.batch_size)
        bc = lambda a: np.broadcast_to(a, (B,) + a.shape[1:])
        G = np.concatenate([bc(self.G), bc(other.G)], axis=1)
        E = np.concatenate([self._expanded_E(ids), other._expanded_E(ids)], axis=0)
        H = np.concatenate([bc(self.H), bc(other.H)], axis=1)
        return self._new(bc(self.center_) + bc(other.center_), G, E, ids, H,
                         batched=self.batched or other.batched)

    __radd__ = __add__

    def __neg__(self) -> "PolynomialZonotope":
        return self._new(-self.center_, -self.G, self.E, self.ids, -self.H, compact=False)

    def __sub__(self, other) -> "PolynomialZonotope":
        return self + (-other if isinstance(other, PolynomialZonotope) else -np.asarray(other))

    def __rsub__(self, other) -> "PolynomialZonotope":
        return (-self) + other

    def _linear(self, fn) -> "PolynomialZonotope":
        return self._new(fn(self.center_), fn(self.G), self.E, self.ids, fn(self.H))

    def scale(self, a) -> "PolynomialZonotope":
        """Multiply by a constant, broadcasting a scalar PZ against an array
        constant to produce an array-valued PZ."""
        a = np.asarray(a, dtype=float)
        nd = len(self.shape)
        if nd == 0 and a.ndim:
            pad = (None,) * a.ndim
            return self._linear(lambda X: X[(...,) + pad] * a)
        return self._linear(lambda X: X * a)

    def scale_batch(self, a) -> "PolynomialZonotope":
        """Multiply batch member b by ``a[b]`` (a has shape (B,) or (B, *S))."""
        a = np.asarray(a, dtype=float)
        extra = (None,) * (len(self.shape) - (a.ndim - 1))
        ac = a[(slice(None),) + extra]
        ag = a[(slice(None), None) + extra]
        return self._new(self.center_ * ac, self.G * ag, self.E, self.ids, self.H * ag,
                         batched=True)

    def __mul__(self, other) -> "PolynomialZonotope":
        if isinstance(other, PolynomialZonotope):
            return multiply(self, other)
        return self.scale(other)

    __rmul__ = __mul__

    def __matmul__(self, other) -> "PolynomialZonotope":
        if isinstance(other, PolynomialZonotope):
            return matmul(self, other)
        a = np.asarray(other, dtype=float)
        if a.ndim == 1:
            return self._linear(lambda X: np.einsum("...ij,j->...i", X, a))
        return self._linear(lambda X: X @ a)

    def __rmatmul__(self, other) -> "PolynomialZonotope":
        a = np.asarray(other, dtype=float)
        if len(self.shape) == 1:
            return self._linear(lambda X: X @ a.T)
        return self._linear(lambda X: a @ X)

    # -- set operations ---------------------------------------------------------
    def radius_array(self) -> np.ndarray:
        """Sum of absolute generators, shape (B, *S)."""
        return np.abs(self.G).sum(axis=1) + np.abs(self.H).sum(axis=1)

    def sup(self) -> np.ndarray:
        out = self.center_ + self.radius_array()
        return out if self.batched else out[0]

    def inf(self) -> np.ndarray:
        out = self.center_ - self.radius_array()
        return out if self.batched else out[0]

    def slice(self, id_: IndeterminateId, sigma: float) -> "PolynomialZonotope":
        return self.slice_many({id_: sigma})

    def slice_many(self, values: Mapping[IndeterminateId, float]) -> "PolynomialZonotope":
        """Substitute values for named indeterminates (exact subset)."""
        cols = []
        factor = np.ones(self.E.shape[0])
        for id_, sigma in values.items():
            sigma = float(sigma)
            if not -1.0 <= sigma <= 1.0:
                raise ValueError(f"slice value {sigma} for {id_} outside [-1, 1]")
            if id_ not in self.ids:
                continue
            col = self.ids.index(id_)
            cols.append(col)
            factor = factor * sigma ** self.E[:, col]
        if not cols:
            return self
        keep = [n for n in range(len(self.ids)) if n not in cols]
        pad = (None,) * len(self.shape)
        G = self.G * factor[(None, slice(None)) + pad]
        return self._new(self.center_, G, self.E[:, keep], [self.ids[n] for n in keep], self.H)

    def split_dependent(self, keep: Iterable[IndeterminateId]):
        """Split into (center + generators depending only on ``keep``) and a
        zero-centered remainder whose dependent generators became independent."""
        keep = set(keep)
        mask = self._support_mask(keep)
        first = self._new(self.center_, self.G[:, mask], self.E[mask], self.ids,
                          self.H[:, :0])
        H = np.concatenate([self.G[:, ~mask], self.H], axis=1)
        second = self._new(np.zeros_like(self.center_), self.G[:, :0], self.E[:0],
                           self.ids, H)
        return first, second

    def _support_mask(self, keep, max_degree=None) -> np.ndarray:
        cols = np.array([i not in keep for i in self.ids], dtype=bool)
        if self.E.shape[0] == 0:
            return np.zeros(0, dtype=bool)
        mask = ~np.any(self.E[:, cols] != 0, axis=1) if cols.any() else np.ones(self.E.shape[0], bool)
        if max_degree is not None:
            mask &= self.E.sum(axis=1) <= max_degree
        return mask

    def demote(self, keep: Iterable[IndeterminateId], max_degree: int | None = None):
        """Turn dependent generators that involve ids outside ``keep`` (or
        whose total degree exceeds ``max_degree``) into independent ones.
        Sound because every monomial ranges within [-1, 1]."""
        mask = self._support_mask(set(keep), max_degree)
        if mask.all():
            return self
        H = np.concatenate([self.G[:, ~mask], self.H], axis=1)
        return self._new(self.center_, self.G[:, mask], self.E[mask], self.ids, H)

    def box_independent(self) -> "PolynomialZonotope":
        """Enclose the independent part in an axis-aligned box (one generator
        per nonzero entry)."""
        B, S = self.batch_size, self.shape
        F = int(np.prod(S)) if S else 1
        if self.n_indep <= F:
            return self
        rad = np.abs(self.H).sum(axis=1).reshape(B, F)
        nz = np.nonzero(rad.max(axis=0) >= ZERO_TOL)[0]
        H = np.zeros((B, len(nz), F))
        H[:, np.arange(len(nz)), nz] = rad[:, nz]
        return self._new(self.center_, self.G, self.E, self.ids, H.reshape((B, len(nz)) + S),
                         compact=False)

    def realize(self, dep: Mapping[IndeterminateId, float] | None = None, indep=None):
        """Evaluate one element of the set.  Missing dependent ids and
        independent factors default to 0."""
        dep = dep or {}
        mono = np.ones(self.E.shape[0])
        for col, id_ in enumerate(self.ids):
            mono = mono * float(dep.get(id_, 0.0)) ** self.E[:, col]
        pad = (None,) * len(self.shape)
        out = self.center_ + (self.G * mono[(None, slice(None)) + pad]).sum(axis=1)
        if indep is not None and self.n_indep:
            y = np.asarray(indep, dtype=float)
            out = out + (self.H * y[(None, slice(None)) + pad]).sum(axis=1)
        return out if self.batched else out[0]

    def polynomial(self, ids: Sequence[IndeterminateId]):
        """Return (center, G, E) with E expanded over ``ids``; ids of this PZ
        must be a subset."""
        extra = set(self.ids) - set(ids)
        if extra:
            raise ValueError(f"PZ depends on ids {extra} outside {ids}")
        return self.center_, self.G, self._expanded_E(ids)


def make_pz(center, dep_gens=(), indep_gens=()) -> PolynomialZonotope:
    """Build a PZ from ``[(value, {id: exponent}), ...]`` and ``[value, ...]``.
    Duplicate monomials are merged and zero generators dropped."""
    center = np.asarray(center, dtype=float)
    ids = sorted({i for _, ex in dep_gens for i in ex})
    G = np.zeros((len(dep_gens),) + center.shape)
    E = np.zeros((len(dep_gens), len(ids)), dtype=np.int64)
    for n, (val, ex) in enumerate(dep_gens):
        val = np.asarray(val, dtype=float)
        if val.shape != center.shape:
            raise ShapeError(f"generator shape {val.shape} != center shape {center.shape}")
        G[n] = val
        for i, e in ex.items():
            if int(e) < 0:
                raise ValueError("exponents must be nonnegative")
            E[n, ids.index(i)] = int(e)
    H = np.zeros((len(indep_gens),) + center.shape)
    for n, val in enumerate(indep_gens):
        val = np.asarray(val, dtype=float)
        if val.shape != center.shape:
            raise ShapeError(f"generator shape {val.shape} != center shape {center.shape}")
        H[n] = val
    return PolynomialZonotope(center, G, E, ids, H)


def interval_to_pz(lower, upper, fresh_ids: Sequence[IndeterminateId]) -> PolynomialZonotope:
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    if lower.shape != upper.shape:
        raise ShapeError("bounds differ in shape")
    if np.any(lower > upper):
        raise ValueError("lower bound exceeds upper bound")
    if len(fresh_ids) < lower.size:
        raise ValueError("need one fresh id per dimension")
    c = (upper + lower) / 2
    half = (upper - lower) / 2
    gens = []
    for n in range(lower.size):
        g = np.zeros_like(c)
        g[n] = half[n]
        gens.append((g, {fresh_ids[n]: 1}))
    return make_pz(c, gens)


def minkowski_sum(P1: PolynomialZonotope, P2: PolynomialZonotope) -> PolynomialZonotope:
    return P1 + P2


def _bilinear(P: PolynomialZonotope, Q: PolynomialZonotope, op, out_shape) -> PolynomialZonotope:
    ids = tuple(sorted(set(P.ids) | set(Q.ids)))
    E1, E2 = P._expanded_E(ids), Q._expanded_E(ids)
    n1, n2 = P.n_dep, Q.n_dep
    m1, m2 = P.n_indep, Q.n_indep
    B = max(P.batch_size, Q.batch_size)
    cP, cQ = P.center_[:, None], Q.center_[:, None]

    def flat(a):
        return a.reshape((a.shape[0], a.shape[1] * a.shape[2]) + out_shape)

    center = op(P.center_, Q.center_)
    dep = [op(cP, Q.G), op(P.G, cQ), flat(op(P.G[:, :, None], Q.G[:, None]))]
    E = np.concatenate([E2, E1, (E1[:, None, :] + E2[None, :, :]).reshape(n1 * n2, len(ids))])
    indep = [op(cP, Q.H), op(P.H, cQ)]
    if m1 and n2:
        indep.append(flat(op(P.H[:, :, None], Q.G[:, None])))
    if n1 and m2:
        indep.append(flat(op(P.G[:, :, None], Q.H[:, None])))
    if m1 and m2:
        indep.append(flat(op(P.H[:, :, None], Q.H[:, None])))
    bc = lambda a: np.broadcast_to(a, (B,) + a.shape[1:])
    G = np.concatenate([bc(d) for d in dep], axis=1)
    H = np.concatenate([bc(h) for h in indep], axis=1)
    return P._new(bc(center), G, E, ids, H, batched=P.batched or Q.batched)


def multiply(P1: PolynomialZonotope, P2: PolynomialZonotope) -> PolynomialZonotope:
    """Elementwise product with numpy broadcasting of value shapes.  Dependent
    exponents add; anything touching an independent generator becomes
    independent."""
    s1, s2 = P1.shape, P2.shape
    nd = max(len(s1), len(s2))
    p1 = (None,) * (nd - len(s1))
    p2 = (None,) * (nd - len(s2))
    out_shape = np.broadcast_shapes(s1, s2)

    def op(a, b):
        lead_a = a.ndim - len(s1)
        lead_b = b.ndim - len(s2)
        a = a[(slice(None),) * lead_a + p1]
        b = b[(slice(None),) * lead_b + p2]
        return a * b

    return _bilinear(P1, P2, op, out_shape)


def matmul(P1: PolynomialZonotope, P2: PolynomialZonotope) -> PolynomialZonotope:
    """Matrix-matrix or matrix-vector product of PZs."""
    s1, s2 = P1.shape, P2.shape
    if len(s1) != 2 or len(s2) not in (1, 2) or s1[1] != s2[0]:
        raise ShapeError(f"cannot matmul shapes {s1} and {s2}")
    if len(s2) == 1:
        return _bilinear(P1, P2, lambda a, b: (a @ b[..., None])[..., 0], (s1[0],))
    return _bilinear(P1, P2, lambda a, b: a @ b, (s1[0], s2[1]))


def split_dependent(P: PolynomialZonotope, keep):
    return P.split_dependent(keep)


# -- trigonometry ---------------------------------------------------------------

def _sup_abs_sin(lo, hi):
    """Exact sup of |sin| over [lo, hi] (arrays)."""
    # |sin| peaks at pi/2 + n*pi
    n = np.ceil((lo - np.pi / 2) / np.pi)
    hit = np.pi / 2 + n * np.pi <= hi
    return np.where(hit, 1.0, np.maximum(np.abs(np.sin(lo)), np.abs(np.sin(hi))))


def _sup_abs_cos(lo, hi):
    n = np.ceil(lo / np.pi)
    hit = n * np.pi <= hi
    return np.where(hit, 1.0, np.maximum(np.abs(np.cos(lo)), np.abs(np.cos(hi))))


def trig_remainder(q: PolynomialZonotope, order: int = 4):
    """Lagrange remainder bounds (cos, sin) of the order-``order`` Taylor
    expansion about the center of ``q``, per batch member."""
    c = q.center_
    r = q.radius_array()
    lo, hi = c - r, c + r
    n = order + 1
    # d^n/dx^n cos is +-cos for even n, +-sin for odd n; sin is the other way
    if n % 2 == 0:
        mc, ms = _sup_abs_cos(lo, hi), _sup_abs_sin(lo, hi)
    else:
        mc, ms = _sup_abs_sin(lo, hi), _sup_abs_cos(lo, hi)
    scale = r ** n / math.factorial(n)
    return mc * scale, ms * scale


def pz_trig(q: PolynomialZonotope, order: int = 4):
    """Enclose cos(q) and sin(q) for a scalar PZ ``q``.

    Taylor polynomial about the center of q plus a Lagrange remainder added
    as one fresh independent generator.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    if q.shape != ():
        raise ShapeError("pz_trig expects a scalar PZ")
    c = q.center_
    dq = q - q.center_
    was_batched = q.batched
    dq = dq._new(dq.center_, dq.G, dq.E, dq.ids, dq.H, batched=True, compact=False)
    cos_d = [np.cos(c), -np.sin(c), -np.cos(c), np.sin(c)]
    sin_d = [np.sin(c), np.cos(c), -np.sin(c), -np.cos(c)]
    cos_pz = PolynomialZonotope(cos_d[0], batched=True)
    sin_pz = PolynomialZonotope(sin_d[0], batched=True)
    power = None
    for m in range(1, order + 1):
        power = dq if power is None else multiply(power, dq)
        f = 1.0 / math.factorial(m)
        cos_pz = cos_pz + power.scale_batch(cos_d[m % 4] * f)
        sin_pz = sin_pz + power.scale_batch(sin_d[m % 4] * f)
    rc, rs = trig_remainder(q, order)
    cos_pz = cos_pz + PolynomialZonotope(np.zeros_like(c), H=rc[:, None], batched=True)
    sin_pz = sin_pz + PolynomialZonotope(np.zeros_like(c), H=rs[:, None], batched=True)
    if not was_batched:
        cos_pz = cos_pz._new(cos_pz.center_, cos_pz.G, cos_pz.E, cos_pz.ids, cos_pz.H,
                             batched=False, compact=False)
        sin_pz = sin_pz._new(sin_pz.center_, sin_pz.G, sin_pz.E, sin_pz.ids, sin_pz.H,
                             batched=False, compact=False)
    return cos_pz, sin_pz

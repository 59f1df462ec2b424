"""Serial revolute chains: schema loading, forward kinematics, and forward
kinematics over polynomial zonotopes.

Frame convention: frame j is frame j-1 translated by ``offset`` and then
rotated by q_j about ``axis`` (expressed in frame j-1, and unchanged by the
rotation).  Joint j therefore sits at p_j = p_{j-1} + R_{j-1} offset_j and
R_j = R_{j-1} rot(axis_j, q_j).  An optional tip frame adds one more point
after the last joint so the last link has two end spheres.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .jsonio import read_document
from .pz import PolynomialZonotope, k_id, matmul, pz_trig

AXIS_TOL = 1e-9
FIXTURE_DIR = Path(__file__).parent / "fixtures"


class ChainError(ValueError):
    pass


@dataclass(frozen=True)
class Joint:
    axis: np.ndarray
    offset: np.ndarray
    sphere_radius: float
    q_limits: tuple
    qd_limits: tuple
    kind: str = "revolute"

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float)
        if axis.shape != (3,) or abs(np.linalg.norm(axis) - 1.0) > AXIS_TOL:
            raise ChainError(f"joint axis {axis.tolist()} is not a unit 3-vector")
        offset = np.asarray(self.offset, dtype=float)
        if offset.shape != (3,):
            raise ChainError("joint offset must be a 3-vector")
        if not self.sphere_radius > 0:
            raise ChainError("joint sphere radius must be positive")
        lo, hi = map(float, self.q_limits)
        if not lo < hi:
            raise ChainError(f"inverted position limits {self.q_limits}")
        vlo, vhi = map(float, self.qd_limits)
        if not vlo < 0 < vhi:
            raise ChainError(f"velocity limits {self.qd_limits} must bracket zero")
        if self.kind != "revolute":
            raise ChainError(f"unsupported joint kind {self.kind!r}")
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "offset", offset)
        object.__setattr__(self, "q_limits", (lo, hi))
        object.__setattr__(self, "qd_limits", (vlo, vhi))


@dataclass(frozen=True)
class KinematicChain:
    joints: tuple
    base_rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    base_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    tip_offset: np.ndarray | None = None
    tip_radius: float | None = None

    def __post_init__(self):
        if len(self.joints) < 1:
            raise ChainError("a chain needs at least one joint")
        R = np.asarray(self.base_rotation, dtype=float).reshape(3, 3)
        if not np.allclose(R.T @ R, np.eye(3), atol=AXIS_TOL) or np.linalg.det(R) < 0:
            raise ChainError("base rotation is not a proper rotation")
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "base_rotation", R)
        object.__setattr__(self, "base_translation",
                           np.asarray(self.base_translation, dtype=float).reshape(3))
        if (self.tip_offset is None) != (self.tip_radius is None):
            raise ChainError("tip needs both offset and radius")
        if self.tip_offset is not None:
            object.__setattr__(self, "tip_offset", np.asarray(self.tip_offset, dtype=float).reshape(3))
            if not self.tip_radius > 0:
                raise ChainError("tip radius must be positive")

    @property
    def n_q(self) -> int:
        return len(self.joints)

    @property
    def offsets(self) -> list:
        out = [j.offset for j in self.joints]
        if self.tip_offset is not None:
            out.append(self.tip_offset)
        return out

    @property
    def radii(self) -> np.ndarray:
        r = [j.sphere_radius for j in self.joints]
        if self.tip_radius is not None:
            r.append(self.tip_radius)
        return np.array(r)

    @property
    def n_frames(self) -> int:
        return self.n_q + (self.tip_offset is not None)

    @property
    def n_links(self) -> int:
        return self.n_frames - 1

    @property
    def q_limits(self) -> np.ndarray:
        return np.array([j.q_limits for j in self.joints])

    @property
    def qd_limits(self) -> np.ndarray:
        return np.array([j.qd_limits for j in self.joints])

    def reach(self) -> float:
        """Upper bound on the distance from the base to any sphere surface."""
        return float(sum(np.linalg.norm(o) for o in self.offsets) + self.radii.max())

    def to_document(self) -> dict:
        doc = {
            "base": {"rotation": self.base_rotation.reshape(-1).tolist(),
                     "translation": self.base_translation.tolist()},
            "joints": [{"axis": j.axis.tolist(), "offset": j.offset.tolist(),
                        "radius": j.sphere_radius, "q_lim": list(j.q_limits),
                        "qd_lim": list(j.qd_limits)} for j in self.joints],
        }
        if self.tip_offset is not None:
            doc["tip"] = {"offset": self.tip_offset.tolist(), "radius": self.tip_radius}
        return doc


def _vec(doc, key, n, where):
    try:
        v = [float(x) for x in doc[key]]
    except KeyError:
        raise ChainError(f"{where}: missing {key!r}") from None
    except (TypeError, ValueError):
        raise ChainError(f"{where}: {key!r} must be a list of numbers") from None
    if len(v) != n:
        raise ChainError(f"{where}: {key!r} needs {n} numbers, got {len(v)}")
    return v


def load_chain(document) -> KinematicChain:
    """Build a chain from a parsed JSON document, a JSON string or a path."""
    document = read_document(document)
    if not isinstance(document, dict) or "joints" not in document:
        raise ChainError("chain document needs a 'joints' list")
    base = document.get("base", {})
    rot = _vec(base, "rotation", 9, "base") if "rotation" in base else np.eye(3).reshape(-1)
    trans = _vec(base, "translation", 3, "base") if "translation" in base else [0.0, 0.0, 0.0]
    joints = []
    for n, jd in enumerate(document["joints"]):
        where = f"joint {n}"
        if "radius" not in jd:
            raise ChainError(f"{where}: missing 'radius'")
        joints.append(Joint(axis=_vec(jd, "axis", 3, where), offset=_vec(jd, "offset", 3, where),
                            sphere_radius=float(jd["radius"]), q_limits=_vec(jd, "q_lim", 2, where),
                            qd_limits=_vec(jd, "qd_lim", 2, where), kind=jd.get("kind", "revolute")))
    tip = document.get("tip")
    tip_offset = tip_radius = None
    if tip is not None:
        tip_offset = _vec(tip, "offset", 3, "tip")
        tip_radius = float(tip["radius"])
    return KinematicChain(tuple(joints), np.array(rot).reshape(3, 3), np.array(trans),
                          tip_offset, tip_radius)


def fixture_chain(name: str | int) -> KinematicChain:
    """Load a shipped chain fixture: ``3`` / ``7`` or a file stem."""
    stem = {3: "chain_3dof", 7: "chain_7dof", "3": "chain_3dof", "7": "chain_7dof"}.get(name, name)
    return load_chain(json.loads((FIXTURE_DIR / f"{stem}.json").read_text(encoding="utf-8")))


# -- concrete kinematics ----------------------------------------------------------

def skew(a) -> np.ndarray:
    x, y, z = a
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def axis_rotation(axis, q) -> np.ndarray:
    """Rodrigues rotation(s); ``q`` may be an array, giving (..., 3, 3)."""
    K = skew(axis)
    K2 = K @ K
    q = np.asarray(q, dtype=float)[..., None, None]
    return np.eye(3) + np.sin(q) * K + (1.0 - np.cos(q)) * K2


@dataclass(frozen=True)
class FramePose:
    rotation: np.ndarray
    position: np.ndarray


def fk(chain: KinematicChain, q) -> list:
    """Poses of every joint frame (and the tip, if any) in the world frame."""
    q = np.asarray(q, dtype=float)
    if q.shape != (chain.n_q,):
        raise ChainError(f"expected {chain.n_q} joint values, got shape {q.shape}")
    R, p = chain.base_rotation, chain.base_translation
    poses = []
    for joint, qj in zip(chain.joints, q):
        p = p + R @ joint.offset
        R = R @ axis_rotation(joint.axis, qj)
        poses.append(FramePose(R, p))
    if chain.tip_offset is not None:
        poses.append(FramePose(R, p + R @ chain.tip_offset))
    return poses


def joint_positions(chain: KinematicChain, Q) -> np.ndarray:
    """Vectorized sphere centers for many configurations: (N, n_frames, 3)."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    N = Q.shape[0]
    R = np.broadcast_to(chain.base_rotation, (N, 3, 3))
    p = np.broadcast_to(chain.base_translation, (N, 3))
    out = np.empty((N, chain.n_frames, 3))
    for j, joint in enumerate(chain.joints):
        p = p + R @ joint.offset
        out[:, j] = p
        R = R @ axis_rotation(joint.axis, Q[:, j])
    if chain.tip_offset is not None:
        out[:, -1] = p + R @ chain.tip_offset
    return out


# -- forward kinematics over polynomial zonotopes -------------------------------------

@dataclass(frozen=True)
class FramePoseSet:
    rotation: PolynomialZonotope
    position: PolynomialZonotope


def pz_rotation(axis, q_pz: PolynomialZonotope, order: int = 4) -> PolynomialZonotope:
    """Rotation-matrix PZ about ``axis`` for a scalar angle PZ (Rodrigues)."""
    K = skew(axis)
    K2 = K @ K
    cos_pz, sin_pz = pz_trig(q_pz, order)
    return sin_pz.scale(K) + cos_pz.scale(-K2) + (np.eye(3) + K2)


def pzfk(chain: KinematicChain, q_pzs: Sequence[PolynomialZonotope], order: int = 4,
         keep_ids=None, max_degree: int | None = None) -> list:
    """Forward kinematics with one scalar PZ per joint.

    When ``keep_ids`` is given, after every product the generators involving
    other ids (or of total degree above ``max_degree``) are made independent
    and the independent part is boxed.  This keeps generator counts bounded
    at 7+ joints without giving up containment.
    """
    if len(q_pzs) != chain.n_q:
        raise ChainError(f"expected {chain.n_q} joint PZs, got {len(q_pzs)}")
    batched = any(q.batched for q in q_pzs)
    if batched:
        sizes = {q.batch_size for q in q_pzs if q.batched}
        if len(sizes) != 1:
            raise ChainError("joint PZs disagree on batch size")

    def reduce(P):
        if keep_ids is None:
            return P
        return P.demote(keep_ids, max_degree).box_independent()

    R = PolynomialZonotope(chain.base_rotation)
    p = PolynomialZonotope(chain.base_translation)
    frames = []
    for joint, q_pz in zip(chain.joints, q_pzs):
        p = reduce(p + R @ joint.offset)
        R = reduce(matmul(R, pz_rotation(joint.axis, q_pz, order)))
        frames.append(FramePoseSet(R, p))
    if chain.tip_offset is not None:
        frames.append(FramePoseSet(R, reduce(p + R @ chain.tip_offset)))
    return frames

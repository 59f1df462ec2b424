import dataclasses
import json

import numpy as np
import pytest

from spherereach.kinematics import FramePoseSet, fixture_chain, joint_positions
from spherereach.occupancy import (TaperedCapsule, build_pz_link_occupancy, build_sfo, build_sjo, dump_sfo,
                                   interior_fractions, sfo_for_k, sfo_interior, slice_sjo, spheres_contain)
from spherereach.pz import PolynomialZonotope, k_id, make_pz
from spherereach.trajectories import (TrajectoryFamily, eval_trajectory, make_time_partition,
                                      make_trajectory_pzs)


def make_sjo(n_q=3, n_t=10, seed=0):
    rng = np.random.default_rng(seed)
    chain = fixture_chain(n_q)
    fam = TrajectoryFamily(rng.uniform(-1, 1, n_q), rng.uniform(-0.3, 0.3, n_q))
    bundle = make_trajectory_pzs(fam, make_time_partition(1.0, n_t))
    return chain, fam, bundle, build_sjo(chain, bundle)


@pytest.fixture(scope="module")
def sjo3():
    return make_sjo(3)


# -- SJO --------------------------------------------------------------------------------

def test_sjo_degenerate_point_trajectory():
    chain, fam, bundle, _ = make_sjo(3, 4)
    S = bundle.n_segments
    points = tuple(PolynomialZonotope(np.full(S, fam.q0[j]), batched=True) for j in range(3))
    sjo = build_sjo(chain, dataclasses.replace(bundle, positions=points))
    np.testing.assert_allclose(sjo.radii, np.broadcast_to(chain.radii, sjo.radii.shape), atol=1e-15)
    P = joint_positions(chain, fam.q0)[0]
    np.testing.assert_allclose(sjo.poly(np.zeros(3))[0], P, atol=1e-12)


def test_cube_bound():
    U = make_pz(np.zeros(3), indep_gens=[[0.5, 0, 0], [0, 0.5, 0], [0, 0, 0.5]])
    assert np.linalg.norm(U.radius_array()) == pytest.approx(np.sqrt(3) / 2, abs=1e-15)


def test_radius_decomposition(sjo3):
    chain, _, _, sjo = sjo3
    assert np.all(sjo.radii >= chain.radii)
    np.testing.assert_array_equal(sjo.radii, chain.radii + np.linalg.norm(sjo.u_axes, axis=-1))


def test_centers_depend_on_k_only(sjo3):
    _, _, _, sjo = sjo3
    for e in list(sjo)[:20]:
        assert set(e.center_pz.ids) <= {k_id(j) for j in range(3)}
        assert e.center_pz.n_indep == 0
    assert len(sjo) == sjo.n_segments * sjo.n_frames


@pytest.mark.parametrize("n_q", [3, 7])
def test_sjo_contains_fk(n_q):
    chain, fam, bundle, sjo = make_sjo(n_q, 20, seed=n_q)
    rng = np.random.default_rng(10 + n_q)
    n = 100_000
    s = rng.integers(0, bundle.n_segments, n)
    lo, hi = bundle.seg_bounds[s].T
    t = rng.uniform(lo, hi)
    K = rng.uniform(-1, 1, (n, n_q))
    q, _ = eval_trajectory(fam, K, t)
    P = joint_positions(chain, q)
    C = sjo.poly.evaluate_many(K, s)
    gap = np.linalg.norm(P - C, axis=-1)
    # true joint sphere inside the SJO ball: r_j + |d| <= r_{j,i}
    assert np.all(chain.radii + gap <= sjo.radii[s] + 1e-12)


def test_slice_sjo_at_zero(sjo3):
    _, _, _, sjo = sjo3
    e = sjo.entry(3, 2)
    c, r = slice_sjo(e, np.zeros(3))
    c0, _, _ = e.center_pz.polynomial([k_id(j) for j in range(3)])
    np.testing.assert_allclose(c, c0.reshape(3))
    assert r == sjo.radii[3, 2]


def test_slice_sjo_matches_compiled(sjo3):
    _, _, _, sjo = sjo3
    k = np.array([0.3, -0.8, 0.5])
    C = sjo.poly(k)
    for e in sjo:
        np.testing.assert_allclose(slice_sjo(e, k)[0], C[e.i, e.j], atol=1e-13)


def test_slice_sjo_out_of_box(sjo3):
    with pytest.raises(ValueError):
        slice_sjo(sjo3[3].entry(0, 1), [0.0, 1.2, 0.0])


def test_prefix_property():
    chain, _, _, sjo = make_sjo(7, 5)
    rng = np.random.default_rng(1)
    k1 = rng.uniform(-1, 1, 7)
    for j in range(1, 7):
        k2 = k1.copy()
        k2[j:] = rng.uniform(-1, 1, 7 - j)
        np.testing.assert_array_equal(sjo.poly(k1)[:, j], sjo.poly(k2)[:, j])


def test_poly_jacobian(sjo3):
    _, _, _, sjo = sjo3
    k = np.array([0.1, -0.4, 0.7])
    _, J = sjo.poly(k, with_jac=True)
    h = 1e-6
    for l in range(3):
        e = np.zeros(3)
        e[l] = h
        fd = (sjo.poly(k + e) - sjo.poly(k - e)) / (2 * h)
        np.testing.assert_allclose(J[..., l], fd, atol=1e-8)


# -- SFO ---------------------------------------------------------------------------------

def test_equal_radii_example():
    balls = build_sfo((np.zeros(3), 1.0), (np.array([6.0, 0, 0]), 1.0), 5)
    assert len(balls) == 5 and [b.m for b in balls] == [1, 2, 3, 4, 5]
    np.testing.assert_allclose([b.center[0] for b in balls[1:4]], [1, 3, 5])
    np.testing.assert_allclose(interior_fractions(5), [1 / 6, 3 / 6, 5 / 6])
    for b in balls[1:4]:
        assert b.radius == pytest.approx(np.sqrt(2), abs=1e-15)


def test_endpoints_bit_exact():
    rng = np.random.default_rng(2)
    cA, cB = rng.normal(size=3), rng.normal(size=3)
    balls = build_sfo((cA, 0.3), (cB, 0.2), 7)
    np.testing.assert_array_equal(balls[0].center, cA)
    np.testing.assert_array_equal(balls[-1].center, cB)
    assert balls[0].radius == 0.3 and balls[-1].radius == 0.2


def test_coincident_equal():
    c = np.array([1.0, 2.0, 3.0])
    for b in build_sfo((c, 0.5), (c, 0.5), 5):
        np.testing.assert_array_equal(b.center, c)
        assert b.radius == 0.5


def test_coincident_unequal_falls_back():
    c = np.zeros(3)
    balls = build_sfo((c, 0.2), (c, 0.5), 5)
    assert all(b.radius == 0.5 for b in balls[1:4])


def test_n_s_too_small():
    with pytest.raises(ValueError):
        build_sfo((np.zeros(3), 1.0), (np.ones(3), 1.0), 2)


def random_capsule(rng):
    cA, cB = rng.normal(size=3), rng.normal(size=3) * rng.uniform(0, 1)
    return cA, rng.uniform(0.05, 0.6), cB, rng.uniform(0.05, 0.6)


@pytest.mark.parametrize("n_s", [3, 5, 9])
def test_sfo_covers_capsule(n_s):
    rng = np.random.default_rng(n_s)
    for _ in range(30):
        cA, rA, cB, rB = random_capsule(rng)
        balls = build_sfo((cA, rA), (cB, rB), n_s)
        C = np.array([b.center for b in balls])
        R = np.array([b.radius for b in balls])
        cap = TaperedCapsule(cA, rA, cB, rB)
        pts = np.vstack([cap.sample_surface(5000, rng), cap.sample_interior(5000, rng)])
        assert spheres_contain(pts, C, R).all()


def test_monotone_in_n_s_equal_radii():
    rng = np.random.default_rng(3)
    for _ in range(20):
        cA, r, cB, _ = random_capsule(rng)
        mx = [sfo_interior(cA, r, cB, r, n)[1].max() for n in (3, 5, 9, 17)]
        assert all(b <= a + 1e-15 for a, b in zip(mx, mx[1:]))


def test_monotone_bound_unequal_radii():
    # with unequal radii the last interior ball drifts toward the larger end,
    # so only the envelope sqrt(max(rA, rB)^2 + s'^2) shrinks with n_s
    rng = np.random.default_rng(3)
    for _ in range(50):
        cA, rA, cB, rB = random_capsule(rng)
        env = []
        for n in (3, 5, 9, 17):
            den = 2 * (n - 2)
            sp2 = max(np.sum((cB - cA) ** 2) / den ** 2 - ((rB - rA) / den) ** 2, 0.0)
            env.append(np.sqrt(max(rA, rB) ** 2 + sp2))
            assert sfo_interior(cA, rA, cB, rB, n)[1].max() <= env[-1] + 1e-15
        assert all(b <= a for a, b in zip(env, env[1:]))


def test_sfo_interior_jacobian():
    rng = np.random.default_rng(4)
    CA, CB = rng.normal(size=3), rng.normal(size=3) * 2
    dCA, dCB = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
    _, _, dc, dr = sfo_interior(CA, 0.3, CB, 0.4, 5, dCA, dCB)
    h = 1e-6
    for l in range(2):
        p = sfo_interior(CA + h * dCA[:, l], 0.3, CB + h * dCB[:, l], 0.4, 5)
        m = sfo_interior(CA - h * dCA[:, l], 0.3, CB - h * dCB[:, l], 0.4, 5)
        np.testing.assert_allclose(dc[..., l], (p[0] - m[0]) / (2 * h), atol=1e-8)
        np.testing.assert_allclose(dr[..., l], (p[1] - m[1]) / (2 * h), atol=1e-8)


def test_sfo_for_k_ordering(sjo3):
    _, _, _, sjo = sjo3
    balls = sfo_for_k(sjo, np.zeros(3), 5)
    assert len(balls) == sjo.n_segments * (sjo.n_frames - 1) * 5
    keys = [(b.i, b.j, b.m) for b in balls]
    assert keys == sorted(keys)


def test_dump_format(tmp_path, sjo3):
    _, _, _, sjo = sjo3
    dump_sfo(sfo_for_k(sjo, np.full(3, 0.2), 4), tmp_path / "sfo.json")
    doc = json.loads((tmp_path / "sfo.json").read_text(encoding="utf-8"))
    assert set(doc[0]) == {"j", "i", "m", "center", "radius"}
    assert len(doc[0]["center"]) == 3 and doc[0]["radius"] > 0


# -- capsule helpers ---------------------------------------------------------------------------

def test_capsule_distance():
    cap = TaperedCapsule(np.zeros(3), 1.0, np.array([4.0, 0, 0]), 1.0)
    np.testing.assert_allclose(cap.distance([[2.0, 3.0, 0.0], [-3.0, 0, 0], [1.0, 0, 0]]), [2.0, 2.0, -1.0],
                               atol=1e-9)
    rng = np.random.default_rng(5)
    assert np.all(np.abs(cap.distance(cap.sample_surface(200, rng))) < 1e-8)


def test_capsule_rejects_bad_radius():
    with pytest.raises(ValueError):
        TaperedCapsule(np.zeros(3), 0.0, np.ones(3), 1.0)


# -- box-link baseline -------------------------------------------------------------------------------

def test_link_occupancy_identity_rotation_is_box():
    chain = fixture_chain(3)
    frames = [FramePoseSet(PolynomialZonotope(np.eye(3)), PolynomialZonotope(np.zeros(3)))] * chain.n_frames
    boxes = [(np.array([0.1, 0, 0]), np.array([0.2, 0.1, 0.05]))] * chain.n_links
    occ = build_pz_link_occupancy(chain, frames, boxes)
    np.testing.assert_allclose(occ[0].sup(), [0.3, 0.1, 0.05])
    np.testing.assert_allclose(occ[0].inf(), [-0.1, -0.1, -0.05])


def test_link_occupancy_zero_box_is_position():
    chain = fixture_chain(3)
    pos = make_pz(np.ones(3), [(np.array([0.1, 0.2, 0.0]), {k_id(0): 1})])
    frames = [FramePoseSet(PolynomialZonotope(np.eye(3)), pos)] * chain.n_frames
    occ = build_pz_link_occupancy(chain, frames, [(np.zeros(3), np.zeros(3))] * chain.n_links)
    np.testing.assert_array_equal(occ[1].sup(), pos.sup())
    np.testing.assert_array_equal(occ[1].inf(), pos.inf())

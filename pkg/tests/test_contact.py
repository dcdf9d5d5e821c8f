import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from helpers import CUBE, chain2, face_pair, random_hull, random_pose
from hullsim.barrier import BarrierParams
from hullsim.contact import (ContactResult, PenetrationError, contact_derivatives, contact_joint_derivatives,
                             init_plane, inner_energy, pair_blocks, side_distances, solve_contact, vertex_forces)
from hullsim.kinematics import Kinematics

PARAMS = BarrierParams()
S = PARAMS.s


def ref_barrier(x):
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        return np.inf
    return float(np.sum(np.where(x < S, (x - S) ** 4 / x ** 5, 0.0)))


def ref_energy(A, B, p):
    n, o = p[:3], p[3]
    return ref_barrier(np.concatenate([[1.0 - np.linalg.norm(n)], -(A @ n + o), B @ n + o]))


def oracle_value(A, B):
    """Coarse grid over unit normals and offsets, then a derivative-free polish."""
    ca, cb = A.mean(axis=0), B.mean(axis=0)
    axis = (cb - ca) / np.linalg.norm(cb - ca)
    rng = np.random.default_rng(7)
    best = None
    dirs = [axis] + [axis + 0.15 * v for v in rng.standard_normal((60, 3))]
    for u in dirs:
        u = u / np.linalg.norm(u)
        lo, hi = (A @ u).max(), (B @ u).min()
        if hi <= lo:
            continue
        for mag in (1 - S, 1 - 0.5 * S, 1 - 1.5 * S):
            for frac in (0.3, 0.5, 0.7):
                n = mag * u
                p = np.concatenate([n, [-(lo + frac * (hi - lo)) * mag]])
                e = ref_energy(A, B, p)
                if best is None or e < best[0]:
                    best = (e, p)
    res = minimize(lambda p: ref_energy(A, B, p), best[1], method="Nelder-Mead",
                   options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 20000, "maxfev": 40000})
    return min(res.fun, best[0])


def test_support_radius():
    d = PARAMS.support_distance
    B_far = CUBE + [1.0 + d * (1 + 1e-6), 0, 0]
    B_near = CUBE + [1.0 + d * (1 - 1e-3), 0, 0]
    assert solve_contact(CUBE, B_far, PARAMS).value == 0.0
    assert solve_contact(CUBE, B_near, PARAMS).value > 0.0


def test_point_pair_closed_form():
    # two points at distance d: optimal plane bisects them with |n| balancing the norm barrier
    d = 0.1
    A = np.zeros((1, 3))
    B = np.array([[0, 0, d]])
    r = solve_contact(A, B, PARAMS)
    m = minimize(lambda t: ref_barrier([1 - t[0]]) + 2 * ref_barrier([t[0] * d / 2]), [1 - S],
                 method="Nelder-Mead", options={"xatol": 1e-13, "fatol": 1e-15})
    assert r.value == pytest.approx(m.fun, rel=1e-7)
    assert np.allclose(r.plane[:2], 0, atol=1e-12)
    assert r.q_a[0] == pytest.approx(r.q_b[0], rel=1e-9)


@pytest.mark.parametrize("seed", range(8))
def test_value_matches_grid_polish_oracle(seed):
    rng = np.random.default_rng(seed)
    A = random_pose(rng, random_hull(rng, 8))
    B = random_pose(rng, random_hull(rng, 8))
    gap = rng.uniform(0.02, 0.15)
    B = B + [A[:, 0].max() - B[:, 0].min() + gap, 0, 0]
    r = solve_contact(A, B, PARAMS)
    ref = oracle_value(A, B)
    assert r.value <= ref * (1 + 1e-9) + 1e-12
    assert r.value == pytest.approx(ref, rel=1e-5)
    assert r.value == pytest.approx(ref_energy(A, B, r.plane), rel=1e-12)


def test_intersecting_hulls_raise():
    with pytest.raises(PenetrationError):
        solve_contact(CUBE, CUBE + 0.5, PARAMS)
    with pytest.raises(PenetrationError):
        init_plane(np.zeros(3), np.zeros(3), S)


def test_init_plane_is_feasible():
    xa, xb = np.array([0.0, 0, 0]), np.array([0.0, 0, 0.05])
    p = init_plane(xa, xb, S)
    assert np.linalg.norm(p[:3]) == pytest.approx(1 - S)
    qa, qb = side_distances(xa[None], xb[None], p)
    assert qa[0] == pytest.approx(qb[0]) and qa[0] > 0
    assert np.isfinite(inner_energy(xa[None], xb[None], p, S))


def vertex_energy(X, na):
    return solve_contact(X[:na], X[na:], PARAMS, tol=1e-12).value


@pytest.mark.parametrize("seed", range(5))
def test_vertex_derivatives_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    A, B = face_pair(rng, gap=rng.uniform(0.03, 0.1))
    X = np.vstack([A, B])
    r = solve_contact(A, B, PARAMS, tol=1e-12)
    der = contact_derivatives(A, B, r, PARAMS)
    h = 1e-6
    g_fd = np.zeros_like(X)
    H_fd = np.zeros((X.size, X.size))
    for k in range(X.size):
        E = np.zeros(X.size)
        E[k] = h
        Xp, Xm = X + E.reshape(X.shape), X - E.reshape(X.shape)
        g_fd.flat[k] = (vertex_energy(Xp, 8) - vertex_energy(Xm, 8)) / (2 * h)
        rp = solve_contact(Xp[:8], Xp[8:], PARAMS, tol=1e-12)
        rm = solve_contact(Xm[:8], Xm[8:], PARAMS, tol=1e-12)
        gp = contact_derivatives(Xp[:8], Xp[8:], rp, PARAMS, order=1).grad
        gm = contact_derivatives(Xm[:8], Xm[8:], rm, PARAMS, order=1).grad
        H_fd[:, k] = (gp - gm).reshape(-1) / (2 * h)
    assert np.linalg.norm(der.grad - g_fd) <= 1e-5 * np.linalg.norm(g_fd)
    assert np.linalg.norm(der.hess - H_fd) <= 1e-4 * np.linalg.norm(H_fd)


@settings(max_examples=25)
@given(st.integers(0, 10**6))
def test_forces_conserve_momentum(seed):
    rng = np.random.default_rng(seed)
    A, B = face_pair(rng, gap=rng.uniform(0.01, 0.15), tilt=0.3, shift=0.4)
    r = solve_contact(A, B, PARAMS)
    F = vertex_forces(A, B, r, PARAMS)
    X = np.vstack([A, B])
    scale = np.abs(F).sum() + 1e-300
    assert np.linalg.norm(F.sum(axis=0)) <= 1e-10 * scale
    assert np.linalg.norm(np.cross(X, F).sum(axis=0)) <= 1e-10 * scale * np.abs(X).max()


def test_forces_push_hulls_apart(rng):
    A, B = face_pair(rng, gap=0.05, tilt=0.0, shift=0.0)
    F = vertex_forces(A, B, solve_contact(A, B, PARAMS), PARAMS)
    assert F[:8, 2].sum() < 0 < F[8:, 2].sum()


def test_warm_start_reaches_same_plane(rng):
    A, B = face_pair(rng, gap=0.05)
    cold = solve_contact(A, B, PARAMS, tol=1e-12)
    B2 = B + [0.001, 0, -0.002]
    ref = solve_contact(A, B2, PARAMS, tol=1e-12)
    warm = solve_contact(A, B2, PARAMS, warm=cold.plane, tol=1e-12)
    assert np.allclose(warm.plane, ref.plane, atol=1e-9)
    assert warm.iterations <= ref.iterations
    # an infeasible warm start falls back to a cold start
    bad = solve_contact(A, B2, PARAMS, warm=np.array([0, 0, 0.9, 100.0]), tol=1e-12)
    assert np.allclose(bad.plane, ref.plane, atol=1e-9)


def test_inactive_contact_derivatives_are_zero():
    A, B = CUBE, CUBE + [2.0, 0, 0]
    r = solve_contact(A, B, PARAMS)
    der = contact_derivatives(A, B, r, PARAMS)
    assert isinstance(r, ContactResult) and not r.active
    assert not der.grad.any() and not der.hess.any()


def test_joint_space_derivatives():
    robot, _, _ = chain2()
    # the second link's tip hangs about 0.07 above the ground
    theta = np.array([0.26, 0.6])
    kin = Kinematics(robot)
    pair = ((0, 0), (2, 0))
    blocks = pair_blocks(robot, pair)
    v, g, Hz = contact_joint_derivatives(kin, theta, pair, PARAMS)
    assert v > 0

    def energy(t):
        st_ = kin.jets(t, 0)
        return solve_contact(kin.world_points(st_, *blocks[0]), kin.world_points(st_, *blocks[1]), PARAMS,
                             tol=1e-12).value

    h = 1e-6
    g_fd = np.array([(energy(theta + e) - energy(theta - e)) / (2 * h) for e in np.eye(2) * h])
    assert np.allclose(g, g_fd, rtol=1e-5)
    H_fd = np.column_stack([(contact_joint_derivatives(kin, theta + e, pair, PARAMS)[1]
                             - contact_joint_derivatives(kin, theta - e, pair, PARAMS)[1]) / (2 * h)
                            for e in np.eye(2) * h])
    assert np.allclose(Hz, H_fd, rtol=1e-4)

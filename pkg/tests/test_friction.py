import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from helpers import CUBE, face_pair
from hullsim.barrier import BarrierParams
from hullsim.contact import solve_contact
from hullsim.friction import (friction_derivatives, friction_forces, friction_frame, inner_dissipation,
                              solve_friction, tangent_basis)

PARAMS = BarrierParams()
MU, DT = 0.5, 0.01
TOL = 1e-12


def frame_for(A, B, mu=MU):
    return friction_frame(A, B, solve_contact(A, B, PARAMS, tol=TOL), PARAMS, mu, DT)


def slid(rng, X0, speed=0.05):
    return X0 + DT * (rng.normal(size=3) * speed + 1e-3 * rng.standard_normal(X0.shape))


def ref_dissipation(frame, X1, w):
    """Dissipation written out directly from the frame quantities."""
    n, B = frame.normal, frame.basis
    total = 0.0
    for m in range(len(frame.X0)):
        if frame.coeff[m] == 0.0:
            continue
        v = (X1[m] - frame.X0[m]) / DT - w[2] * np.cross(n, frame.X0[m])
        r = B.T @ v - w[:2]
        total += frame.coeff[m] * np.sqrt(r @ r + frame.eps)
    return total


@settings(max_examples=40)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 1e-3))
def test_tangent_basis(n):
    n = np.array(n)
    B, dB = tangent_basis(n, derivative=True)
    assert np.allclose(B.T @ B, np.eye(2), atol=1e-12)
    assert np.allclose(B.T @ n, 0, atol=1e-12)
    # right-handed with the normal
    assert np.cross(B[:, 0], B[:, 1]) @ n > 0
    h = 1e-7
    for k in range(3):
        e = np.eye(3)[k] * h
        pivots = {int(np.argmin(np.abs(v))) for v in (n, n + e, n - e)}
        if len(pivots) > 1 or np.sort(np.abs(n))[1] - np.sort(np.abs(n))[0] < 1e-6:
            continue
        fd = (tangent_basis(n + e) - tangent_basis(n - e)) / (2 * h)
        assert np.allclose(dB[:, :, k], fd, atol=1e-5 / np.linalg.norm(n))


@pytest.mark.parametrize("seed", range(6))
def test_value_matches_grid_polish_oracle(seed):
    rng = np.random.default_rng(seed)
    A, B = face_pair(rng, gap=0.05, tilt=0.1)
    f = frame_for(A, B)
    X1 = slid(rng, f.X0)
    res = solve_friction(f, X1, tol=TOL)
    grid = np.linspace(-0.2, 0.2, 9)
    start = min(((ref_dissipation(f, X1, np.array([a, b, c])), (a, b, c)) for a in grid for b in grid
                 for c in np.linspace(-0.5, 0.5, 5)))
    ref = minimize(lambda w: ref_dissipation(f, X1, w), start[1], method="Nelder-Mead",
                   options={"xatol": 1e-12, "fatol": 1e-16, "maxiter": 20000})
    assert res.value <= ref.fun * (1 + 1e-9)
    assert res.value == pytest.approx(ref.fun, rel=1e-7)
    w = np.concatenate([res.u, [res.omega]])
    assert res.value == pytest.approx(ref_dissipation(f, X1, w), rel=1e-12)
    assert res.value == pytest.approx(inner_dissipation(f, X1, res.u, res.omega), rel=1e-12)


def rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_x1_derivatives_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    A, B = face_pair(rng, gap=0.04)
    f = frame_for(A, B)
    X1 = slid(rng, f.X0)
    der = friction_derivatives(f, X1, solve_friction(f, X1, tol=TOL))
    # the smoothing length in X1 is about dt * sqrt(eps), so the step must be far below it
    h = 1e-9
    N = len(X1)
    g_fd = np.zeros(3 * N)
    H_fd = np.zeros((3 * N, 3 * N))
    for k in range(3 * N):
        E = np.zeros(3 * N)
        E[k] = h
        Xp, Xm = X1 + E.reshape(N, 3), X1 - E.reshape(N, 3)
        rp, rm = solve_friction(f, Xp, tol=TOL), solve_friction(f, Xm, tol=TOL)
        g_fd[k] = (rp.value - rm.value) / (2 * h)
        H_fd[:, k] = (friction_derivatives(f, Xp, rp).grad_x1 - friction_derivatives(f, Xm, rm).grad_x1).ravel() / (2 * h)
    assert rel(der.grad_x1.ravel(), g_fd) < 1e-5
    assert rel(der.hess_x1, H_fd) < 1e-4


@pytest.mark.parametrize("seed", range(3))
def test_x0_derivatives_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    A, B = face_pair(rng, gap=0.04)
    f = frame_for(A, B)
    X1 = slid(rng, f.X0)
    der = friction_derivatives(f, X1, solve_friction(f, X1, tol=TOL), PARAMS, full=True)
    N = len(X1)
    h = 1e-7

    def at(X0):
        fr = frame_for(X0[:8], X0[8:])
        res = solve_friction(fr, X1, tol=TOL)
        return res.value, friction_derivatives(fr, X1, res).grad_x1.ravel()

    g_fd = np.zeros(3 * N)
    M_fd = np.zeros((3 * N, 3 * N))
    for k in range(3 * N):
        E = np.zeros((N, 3))
        E.flat[k] = h
        vp, gp = at(f.X0 + E)
        vm, gm = at(f.X0 - E)
        g_fd[k] = (vp - vm) / (2 * h)
        M_fd[:, k] = (gp - gm) / (2 * h)
    assert rel(der.grad_x0.ravel(), g_fd) < 1e-4
    assert rel(der.hess_x1x0, M_fd) < 1e-3


@settings(max_examples=20)
@given(st.integers(0, 10**6))
def test_forces_conserve_tangential_momentum(seed):
    rng = np.random.default_rng(seed)
    A, B = face_pair(rng, gap=rng.uniform(0.02, 0.08), tilt=0.2)
    f = frame_for(A, B)
    X1 = slid(rng, f.X0, 0.2)
    res = solve_friction(f, X1, tol=TOL)
    F = friction_forces(f, X1, res)
    scale = np.abs(F).sum()
    tangential = f.basis.T @ F.sum(axis=0)
    assert np.linalg.norm(tangential) <= 1e-6 * scale
    # forces act in the tangent plane
    assert np.abs(F @ f.normal).max() <= 1e-12 * scale
    # zero net moment about the normal when the rotation is free
    if res.use_omega:
        assert abs((np.cross(f.X0, F) @ f.normal).sum()) <= 1e-6 * scale


def test_pivot_shift_leaves_value_unchanged(rng):
    A, B = face_pair(rng, gap=0.05)
    f = frame_for(A, B)
    X1 = slid(rng, f.X0)
    base = solve_friction(f, X1, tol=TOL)
    for alpha in (-2.0, 0.5, 3.0):
        shifted = solve_friction(f, X1, alpha=alpha, tol=TOL)
        assert shifted.value == pytest.approx(base.value, rel=1e-10)
        assert shifted.omega == pytest.approx(base.omega, rel=1e-6, abs=1e-10)


def test_static_slip_is_zero_force_free():
    # rigid sliding of both hulls together costs only the smoothing floor
    A, B = face_pair(np.random.default_rng(3), gap=0.05, tilt=0.0, shift=0.0)
    f = frame_for(A, B)
    X1 = f.X0 + DT * np.array([0.3, -0.1, 0.0])
    res = solve_friction(f, X1, tol=TOL)
    assert res.value == pytest.approx(f.coeff.sum() * np.sqrt(f.eps), rel=1e-8)
    assert np.abs(friction_forces(f, X1, res)).max() < 1e-8


def test_degenerate_rotation_is_pinned():
    # single contacting vertex on each side: the rotation is invisible
    A = np.zeros((1, 3))
    B = np.array([[0.0, 0.0, 0.05]])
    f = frame_for(A, B)
    X1 = f.X0 + DT * np.array([[0.1, 0.0, 0.0], [-0.2, 0.1, 0.0]])
    res = solve_friction(f, X1, tol=TOL)
    assert not res.use_omega and res.omega == 0.0
    der = friction_derivatives(f, X1, res, PARAMS, full=True)
    assert np.all(np.isfinite(der.hess_x1)) and np.all(np.isfinite(der.hess_x1x0))


def test_inactive_and_frictionless():
    f = frame_for(CUBE, CUBE + [0, 0, 2.0])
    assert not f.active
    res = solve_friction(f, f.X0 + 0.01)
    assert res.value == 0.0
    assert not friction_derivatives(f, f.X0 + 0.01, res).grad_x1.any()
    A, B = face_pair(np.random.default_rng(0), gap=0.05)
    assert not frame_for(A, B, mu=0.0).active


def test_coefficients_scale_with_mu_and_dt():
    A, B = face_pair(np.random.default_rng(1), gap=0.05)
    c = solve_contact(A, B, PARAMS)
    f1 = friction_frame(A, B, c, PARAMS, 0.5, 0.01)
    f2 = friction_frame(A, B, c, PARAMS, 1.0, 0.02)
    assert np.allclose(f2.coeff, 4 * f1.coeff)

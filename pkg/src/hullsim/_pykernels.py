"""Pure-NumPy implementations of the hot kernels.

These mirror ``_kernels.pyx`` step for step (same Newton loop, same line
search constants, same stopping rules) so either backend can be selected at
import time.  Status codes: 0 converged, 1 max iterations, 2 infeasible
start, 3 stalled above tolerance.
"""
from __future__ import annotations

import math

import numpy as np

ARMIJO = 1e-4
MIN_STEP = 1e-16
POLISH_STEPS = 2
STALL_REL = 1e-12
# gradients this small are negligible whatever the energy scale
TINY_GRAD = 1e-30
# Relative energy change below which the line search falls back to gradient decrease.
FLAT_REL = 1e-10
# Multiple of machine epsilon in the round-off estimates: ``ROUNDOFF * scale``
# bounds energy noise, and each kernel reports its own gradient noise floor.
ROUNDOFF = 8.0 * np.finfo(float).eps


def barrier_eval(x, s):
    """Vectorised ``(P, P', P'')``.  Returns ``None`` if any ``x <= 0``."""
    x = np.asarray(x, dtype=float)
    if x.size and not np.all(x > 0.0):
        return None
    inside = x < s
    xi = np.where(inside, x, 1.0)
    d = xi - s
    inv = 1.0 / xi
    inv6 = inv**6
    val = np.where(inside, d**4 * inv6 * xi, 0.0)
    grad = np.where(inside, d**3 * (5.0 * s - xi) * inv6, 0.0)
    hess = np.where(inside, 2.0 * d * d * (xi * xi - 10.0 * s * xi + 15.0 * s * s) * inv6 * inv, 0.0)
    return val, grad, hess


def _barrier_val(x, s):
    if x >= s:
        return 0.0
    d = x - s
    return d**4 / x**5


def _plane_energy(A, B, p, s):
    n = p[:3]
    nn = math.sqrt(float(n @ n))
    x0 = 1.0 - nn
    if not x0 > 0.0:
        return math.inf
    qa = -(A @ n + p[3])
    qb = B @ n + p[3]
    if (qa.size and not np.all(qa > 0.0)) or (qb.size and not np.all(qb > 0.0)):
        return math.inf
    total = _barrier_val(x0, s)
    for q in (qa, qb):
        m = q < s
        if np.any(m):
            qm = q[m]
            total += float(np.sum((qm - s) ** 4 / qm**5))
    return total


def _plane_full(A, B, p, s):
    n = p[:3]
    o = p[3]
    nn = math.sqrt(float(n @ n))
    x0 = 1.0 - nn
    if not x0 > 0.0 or nn == 0.0:
        return math.inf, None, None, 0.0, 0.0
    qa = -(A @ n + o)
    qb = B @ n + o
    ra = barrier_eval(qa, s)
    rb = barrier_eval(qb, s)
    if ra is None or rb is None:
        return math.inf, None, None, 0.0, 0.0
    P0, dP0, ddP0 = barrier_eval(np.array([x0]), s)
    P0, dP0, ddP0 = P0[0], dP0[0], ddP0[0]
    Pa, dPa, ddPa = ra
    Pb, dPb, ddPb = rb
    E = P0 + float(np.sum(Pa)) + float(np.sum(Pb))
    nh = n / nn
    g = np.zeros(4)
    g[:3] = -dP0 * nh - dPa @ A + dPb @ B
    g[3] = -float(np.sum(dPa)) + float(np.sum(dPb))
    H = np.zeros((4, 4))
    outer = np.outer(nh, nh)
    H[:3, :3] = ddP0 * outer - dP0 / nn * (np.eye(3) - outer)
    Ah = np.hstack([A, np.ones((A.shape[0], 1))])
    Bh = np.hstack([B, np.ones((B.shape[0], 1))])
    H += (Ah * ddPa[:, None]).T @ Ah + (Bh * ddPb[:, None]).T @ Bh
    wa, wb = np.linalg.norm(A, axis=1) + 1.0, np.linalg.norm(B, axis=1) + 1.0
    scale = abs(dP0) + float(np.sum(np.abs(dPa) * wa)) + float(np.sum(np.abs(dPb) * wb))
    # rounding of q near s is amplified by P''; below this the gradient is noise
    floor = ROUNDOFF * (abs(ddP0) + float(np.sum(np.abs(ddPa) * wa * wa)) + float(np.sum(np.abs(ddPb) * wb * wb)))
    return E, g, H, scale, floor


def _chol_solve(H, rhs):
    """Solve ``H x = rhs`` for symmetric PSD ``H`` with escalating ridge."""
    dim = H.shape[0]
    tr = float(np.trace(H))
    if not tr > 0.0:
        return rhs.copy()
    lam = 0.0
    base = 1e-14 * tr / dim
    for _ in range(40):
        L = _cholesky(H + lam * np.eye(dim))
        if L is not None:
            y = np.zeros(dim)
            for i in range(dim):
                y[i] = (rhs[i] - L[i, :i] @ y[:i]) / L[i, i]
            x = np.zeros(dim)
            for i in range(dim - 1, -1, -1):
                x[i] = (y[i] - L[i + 1:, i] @ x[i + 1:]) / L[i, i]
            return x
        lam = base if lam == 0.0 else lam * 10.0
    return rhs.copy()


def _cholesky(M):
    dim = M.shape[0]
    L = np.zeros_like(M)
    for j in range(dim):
        v = M[j, j] - L[j, :j] @ L[j, :j]
        if not v > 0.0:
            return None
        L[j, j] = math.sqrt(v)
        for i in range(j + 1, dim):
            L[i, j] = (M[i, j] - L[i, :j] @ L[j, :j]) / L[j, j]
    return L


def _newton(full, energy, x, tol, max_iter):
    E, g, H, scale, floor = full(x)
    if not math.isfinite(E):
        return x, E, 0, math.inf, 2
    it = 0
    extra = 0
    status = 1
    while True:
        gn = math.sqrt(float(g @ g))
        # never looser than tol, relative when the energy scale is small
        tol_eff = tol * min(1.0, scale)
        ok = gn < tol_eff or gn <= STALL_REL * scale or gn <= TINY_GRAD
        if gn <= floor:
            status = 0
            break
        if gn < tol_eff:
            if extra >= POLISH_STEPS or gn == 0.0:
                status = 0
                break
            extra += 1
        if it >= max_iter:
            status = 0 if ok else 1
            break
        d = _chol_solve(H, -g)
        gd = float(g @ d)
        if not gd < 0.0:
            status = 0 if ok else 3
            break
        t = 1.0
        accepted = False
        while t >= MIN_STEP:
            Et = energy(x + t * d)
            if Et <= E + ARMIJO * t * gd:
                accepted = True
                break
            if t == 1.0 and abs(Et - E) <= max(FLAT_REL * abs(E), ROUNDOFF * scale):
                # energy differences are at round-off level; compare gradients
                Ef, gf = full(x + d)[:2]
                if math.isfinite(Ef) and math.sqrt(float(gf @ gf)) < gn:
                    accepted = True
                    break
            t *= 0.5
        xn = x + t * d
        if not accepted or np.array_equal(xn, x):
            status = 0 if ok else 3
            break
        x = xn
        E, g, H, scale, floor = full(x)
        it += 1
    return x, E, it, gn, status


def plane_solve(A, B, p0, s, tol=1e-8, max_iter=100):
    """Minimise the separating-plane energy over ``p = (n, o)``.

    Returns ``(p, value, iterations, grad_norm, status)``.
    """
    A = np.ascontiguousarray(A, dtype=float)
    B = np.ascontiguousarray(B, dtype=float)
    p = np.array(p0, dtype=float)
    return _newton(lambda x: _plane_full(A, B, x, s), lambda x: _plane_energy(A, B, x, s), p, tol, max_iter)


def _fric_energy(c, a, k, w, use_omega, eps):
    u = w[:2]
    om = w[2] if use_omega else 0.0
    r = a - om * k - u
    return float(np.sum(c * np.sqrt(np.sum(r * r, axis=1) + eps)))


def _fric_full(c, a, k, w, use_omega, eps):
    dim = 3 if use_omega else 2
    u = w[:2]
    om = w[2] if use_omega else 0.0
    r = a - om * k - u
    phi = np.sqrt(np.sum(r * r, axis=1) + eps)
    E = float(np.sum(c * phi))
    rho = r / phi[:, None]
    g = np.zeros(dim)
    g[:2] = -(c @ rho)
    # Hphi = (I - rho rho^T) / phi
    wgt = c / phi
    Huu = np.eye(2) * float(np.sum(wgt)) - (rho * wgt[:, None]).T @ rho
    H = np.zeros((dim, dim))
    H[:2, :2] = Huu
    scale = float(np.sum(c))
    if use_omega:
        rk = np.sum(rho * k, axis=1)
        g[2] = -float(np.sum(c * rk))
        Hk = k - rho * rk[:, None]
        Huo = (Hk * wgt[:, None]).sum(axis=0)
        H[:2, 2] = Huo
        H[2, :2] = Huo
        H[2, 2] = float(np.sum(wgt * (np.sum(k * k, axis=1) - rk * rk)))
        scale += float(np.sum(c * np.linalg.norm(k, axis=1)))
    return E, g, H, scale, 0.0


def friction_solve(c, a, k, w0, use_omega, eps, tol=1e-8, max_iter=100):
    """Minimise ``sum_m c_m sqrt(|a_m - omega k_m - u|^2 + eps)`` over ``(u, omega)``.

    Returns ``(w, value, iterations, grad_norm, status)`` with ``w = (u0, u1, omega)``.
    """
    c = np.ascontiguousarray(c, dtype=float)
    a = np.ascontiguousarray(a, dtype=float)
    k = np.ascontiguousarray(k, dtype=float)
    dim = 3 if use_omega else 2
    w = np.array(w0, dtype=float)[:dim].copy()
    x, E, it, gn, status = _newton(
        lambda x: _fric_full(c, a, k, x, use_omega, eps),
        lambda x: _fric_energy(c, a, k, x, use_omega, eps),
        w, tol, max_iter,
    )
    out = np.zeros(3)
    out[:dim] = x
    return out, E, it, gn, status

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: barrier evaluation and the two inner Newton solves.

Algorithmically identical to ``_pykernels``; see that module for the
status-code convention.
"""
import numpy as np

from libc.math cimport sqrt, fabs, INFINITY, isfinite

DEF ARMIJO = 1e-4
DEF MIN_STEP = 1e-16
DEF POLISH_STEPS = 2
DEF STALL_REL = 1e-12
DEF TINY_GRAD = 1e-30
DEF FLAT_REL = 1e-10
DEF ROUNDOFF = 8.0 * 2.220446049250313e-16


cdef inline double _flat_tol(double E, double scale) noexcept nogil:
    cdef double a = FLAT_REL * fabs(E)
    cdef double b = ROUNDOFF * scale
    return a if a > b else b


cdef inline void _barrier3(double x, double s, double* P, double* dP, double* ddP) noexcept nogil:
    cdef double d, inv, inv6
    if x >= s:
        P[0] = 0.0
        dP[0] = 0.0
        ddP[0] = 0.0
        return
    d = x - s
    inv = 1.0 / x
    inv6 = inv * inv * inv
    inv6 = inv6 * inv6
    P[0] = d * d * d * d * inv6 * x
    dP[0] = d * d * d * (5.0 * s - x) * inv6
    ddP[0] = 2.0 * d * d * (x * x - 10.0 * s * x + 15.0 * s * s) * inv6 * inv


cdef inline double _barrier1(double x, double s) noexcept nogil:
    cdef double d, x2
    if x >= s:
        return 0.0
    d = x - s
    x2 = x * x
    return d * d * d * d / (x2 * x2 * x)


def barrier_eval(x, double s):
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    out = np.empty((3, n))
    cdef double[:, ::1] o = out
    for i in range(n):
        if not xv[i] > 0.0:
            return None
    with nogil:
        for i in range(n):
            _barrier3(xv[i], s, &o[0, i], &o[1, i], &o[2, i])
    shape = np.shape(x)
    return out[0].reshape(shape), out[1].reshape(shape), out[2].reshape(shape)


# ---------------------------------------------------------------- linear algebra

cdef int _cholesky(double* M, double* L, int dim) noexcept nogil:
    cdef int i, j, k
    cdef double v
    for i in range(dim * dim):
        L[i] = 0.0
    for j in range(dim):
        v = M[j * dim + j]
        for k in range(j):
            v -= L[j * dim + k] * L[j * dim + k]
        if not v > 0.0:
            return 0
        L[j * dim + j] = sqrt(v)
        for i in range(j + 1, dim):
            v = M[i * dim + j]
            for k in range(j):
                v -= L[i * dim + k] * L[j * dim + k]
            L[i * dim + j] = v / L[j * dim + j]
    return 1


cdef void _chol_solve(double* H, double* rhs, double* x, int dim) noexcept nogil:
    cdef double M[16]
    cdef double L[16]
    cdef double y[4]
    cdef double tr = 0.0, lam = 0.0, base, v
    cdef int i, j, attempt
    for i in range(dim):
        tr += H[i * dim + i]
    if not tr > 0.0:
        for i in range(dim):
            x[i] = rhs[i]
        return
    base = 1e-14 * tr / dim
    for attempt in range(40):
        for i in range(dim * dim):
            M[i] = H[i]
        for i in range(dim):
            M[i * dim + i] += lam
        if _cholesky(M, L, dim):
            for i in range(dim):
                v = rhs[i]
                for j in range(i):
                    v -= L[i * dim + j] * y[j]
                y[i] = v / L[i * dim + i]
            for i in range(dim - 1, -1, -1):
                v = y[i]
                for j in range(i + 1, dim):
                    v -= L[j * dim + i] * x[j]
                x[i] = v / L[i * dim + i]
            return
        if lam == 0.0:
            lam = base
        else:
            lam *= 10.0
    for i in range(dim):
        x[i] = rhs[i]


# ---------------------------------------------------------------- separating plane

cdef double _plane_energy(const double[:, ::1] A, const double[:, ::1] B, double* p, double s) noexcept nogil:
    cdef double nn = sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2])
    cdef double x0 = 1.0 - nn
    cdef double total, q
    cdef Py_ssize_t m
    if not x0 > 0.0:
        return INFINITY
    total = _barrier1(x0, s)
    for m in range(A.shape[0]):
        q = -(A[m, 0] * p[0] + A[m, 1] * p[1] + A[m, 2] * p[2] + p[3])
        if not q > 0.0:
            return INFINITY
        total += _barrier1(q, s)
    for m in range(B.shape[0]):
        q = B[m, 0] * p[0] + B[m, 1] * p[1] + B[m, 2] * p[2] + p[3]
        if not q > 0.0:
            return INFINITY
        total += _barrier1(q, s)
    return total


cdef double _plane_full(const double[:, ::1] A, const double[:, ::1] B, double* p, double s,
                        double* g, double* H, double* scale, double* floor) noexcept nogil:
    cdef double nn = sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2])
    cdef double x0 = 1.0 - nn
    cdef double E, P, dP, ddP, q, xn, nh[3]
    cdef double xh[4]
    cdef Py_ssize_t m
    cdef int i, j, side
    cdef const double[:, ::1] X
    cdef double sgn
    if not x0 > 0.0 or nn == 0.0:
        return INFINITY
    for i in range(4):
        g[i] = 0.0
    for i in range(16):
        H[i] = 0.0
    _barrier3(x0, s, &P, &dP, &ddP)
    E = P
    scale[0] = fabs(dP)
    floor[0] = fabs(ddP)
    for i in range(3):
        nh[i] = p[i] / nn
        g[i] = -dP * nh[i]
    for i in range(3):
        for j in range(3):
            H[i * 4 + j] = ddP * nh[i] * nh[j] - dP / nn * ((1.0 if i == j else 0.0) - nh[i] * nh[j])
    for side in range(2):
        if side == 0:
            X = A
            sgn = -1.0
        else:
            X = B
            sgn = 1.0
        for m in range(X.shape[0]):
            q = sgn * (X[m, 0] * p[0] + X[m, 1] * p[1] + X[m, 2] * p[2] + p[3])
            if not q > 0.0:
                return INFINITY
            if q >= s:
                continue
            _barrier3(q, s, &P, &dP, &ddP)
            E += P
            xh[0] = X[m, 0]
            xh[1] = X[m, 1]
            xh[2] = X[m, 2]
            xh[3] = 1.0
            xn = sqrt(xh[0] * xh[0] + xh[1] * xh[1] + xh[2] * xh[2])
            scale[0] += fabs(dP) * (xn + 1.0)
            floor[0] += fabs(ddP) * (xn + 1.0) * (xn + 1.0)
            for i in range(4):
                g[i] += sgn * dP * xh[i]
                for j in range(4):
                    H[i * 4 + j] += ddP * xh[i] * xh[j]
    # rounding of q near s is amplified by P''; below this the gradient is noise
    floor[0] *= ROUNDOFF
    return E


def plane_solve(A, B, p0, double s, double tol=1e-8, int max_iter=100):
    """Minimise the separating-plane energy over ``p = (n, o)``.

    Returns ``(p, value, iterations, grad_norm, status)``.
    """
    cdef const double[:, ::1] Av = np.ascontiguousarray(A, dtype=np.float64).reshape(-1, 3)
    cdef const double[:, ::1] Bv = np.ascontiguousarray(B, dtype=np.float64).reshape(-1, 3)
    p_out = np.array(p0, dtype=np.float64)
    cdef double[::1] pv = p_out
    cdef double p[4]
    cdef double pt[4]
    cdef double g[4]
    cdef double H[16]
    cdef double gt[4]
    cdef double Ht[16]
    cdef double st, fl, flt
    cdef double d[4]
    cdef double neg[4]
    cdef double E, Et, gn, gd, t, scale, tol_eff
    cdef int it = 0, extra = 0, status = 1, i, accepted, ok, moved
    for i in range(4):
        p[i] = pv[i]
    with nogil:
        E = _plane_full(Av, Bv, p, s, g, H, &scale, &fl)
        if not isfinite(E):
            status = 2
            gn = INFINITY
        else:
            while True:
                gn = sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2] + g[3] * g[3])
                tol_eff = tol * (scale if scale < 1.0 else 1.0)
                ok = gn < tol_eff or gn <= STALL_REL * scale or gn <= TINY_GRAD
                if gn <= fl:
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
                for i in range(4):
                    neg[i] = -g[i]
                _chol_solve(H, neg, d, 4)
                gd = g[0] * d[0] + g[1] * d[1] + g[2] * d[2] + g[3] * d[3]
                if not gd < 0.0:
                    status = 0 if ok else 3
                    break
                t = 1.0
                accepted = 0
                while t >= MIN_STEP:
                    for i in range(4):
                        pt[i] = p[i] + t * d[i]
                    Et = _plane_energy(Av, Bv, pt, s)
                    if Et <= E + ARMIJO * t * gd:
                        accepted = 1
                        break
                    if t == 1.0 and fabs(Et - E) <= _flat_tol(E, scale):
                        # energy differences are at round-off level; compare gradients
                        Et = _plane_full(Av, Bv, pt, s, gt, Ht, &st, &flt)
                        if isfinite(Et) and sqrt(gt[0] * gt[0] + gt[1] * gt[1] + gt[2] * gt[2] + gt[3] * gt[3]) < gn:
                            accepted = 1
                            break
                    t *= 0.5
                moved = 0
                for i in range(4):
                    pt[i] = p[i] + t * d[i]
                    if pt[i] != p[i]:
                        moved = 1
                if not accepted or not moved:
                    status = 0 if ok else 3
                    break
                for i in range(4):
                    p[i] = pt[i]
                E = _plane_full(Av, Bv, p, s, g, H, &scale, &fl)
                it += 1
    for i in range(4):
        pv[i] = p[i]
    return p_out, E, it, gn, status


# ---------------------------------------------------------------- plane velocity (friction)

cdef double _fric_energy(const double[::1] c, const double[:, ::1] a, const double[:, ::1] k,
                         double* w, int use_omega, double eps) noexcept nogil:
    cdef double om = w[2] if use_omega else 0.0
    cdef double r0, r1, total = 0.0
    cdef Py_ssize_t m
    for m in range(c.shape[0]):
        r0 = a[m, 0] - om * k[m, 0] - w[0]
        r1 = a[m, 1] - om * k[m, 1] - w[1]
        total += c[m] * sqrt(r0 * r0 + r1 * r1 + eps)
    return total


cdef double _fric_full(const double[::1] c, const double[:, ::1] a, const double[:, ::1] k,
                       double* w, int use_omega, double eps, double* g, double* H, double* scale) noexcept nogil:
    cdef int dim = 3 if use_omega else 2
    cdef double om = w[2] if use_omega else 0.0
    cdef double r0, r1, phi, rho0, rho1, wgt, rk, E = 0.0, k0, k1
    cdef Py_ssize_t m
    cdef int i
    for i in range(dim):
        g[i] = 0.0
    for i in range(dim * dim):
        H[i] = 0.0
    scale[0] = 0.0
    for m in range(c.shape[0]):
        r0 = a[m, 0] - om * k[m, 0] - w[0]
        r1 = a[m, 1] - om * k[m, 1] - w[1]
        phi = sqrt(r0 * r0 + r1 * r1 + eps)
        E += c[m] * phi
        rho0 = r0 / phi
        rho1 = r1 / phi
        wgt = c[m] / phi
        scale[0] += c[m]
        g[0] -= c[m] * rho0
        g[1] -= c[m] * rho1
        H[0 * dim + 0] += wgt * (1.0 - rho0 * rho0)
        H[0 * dim + 1] -= wgt * rho0 * rho1
        H[1 * dim + 0] -= wgt * rho0 * rho1
        H[1 * dim + 1] += wgt * (1.0 - rho1 * rho1)
        if use_omega:
            k0 = k[m, 0]
            k1 = k[m, 1]
            rk = rho0 * k0 + rho1 * k1
            g[2] -= c[m] * rk
            H[0 * dim + 2] += wgt * (k0 - rho0 * rk)
            H[1 * dim + 2] += wgt * (k1 - rho1 * rk)
            H[2 * dim + 2] += wgt * (k0 * k0 + k1 * k1 - rk * rk)
            scale[0] += c[m] * sqrt(k0 * k0 + k1 * k1)
    if use_omega:
        H[2 * dim + 0] = H[0 * dim + 2]
        H[2 * dim + 1] = H[1 * dim + 2]
    return E


def friction_solve(c, a, k, w0, bint use_omega, double eps, double tol=1e-8, int max_iter=100):
    """Minimise ``sum_m c_m sqrt(|a_m - omega k_m - u|^2 + eps)`` over ``(u, omega)``.

    Returns ``(w, value, iterations, grad_norm, status)`` with ``w = (u0, u1, omega)``.
    """
    cdef const double[::1] cv = np.ascontiguousarray(c, dtype=np.float64).ravel()
    cdef const double[:, ::1] av = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 2)
    cdef const double[:, ::1] kv = np.ascontiguousarray(k, dtype=np.float64).reshape(-1, 2)
    w0a = np.asarray(w0, dtype=np.float64)
    cdef int dim = 3 if use_omega else 2
    cdef double w[3]
    cdef double wt[3]
    cdef double g[3]
    cdef double H[9]
    cdef double gt[3]
    cdef double Ht[9]
    cdef double st, gnt
    cdef double d[3]
    cdef double neg[3]
    cdef double E, Et, gn, gd, t, scale, tol_eff
    cdef int it = 0, extra = 0, status = 1, i, accepted, ok, moved
    cdef int uo = 1 if use_omega else 0
    w[0] = w0a[0]
    w[1] = w0a[1]
    w[2] = w0a[2] if use_omega else 0.0
    with nogil:
        E = _fric_full(cv, av, kv, w, uo, eps, g, H, &scale)
        while True:
            gn = 0.0
            for i in range(dim):
                gn += g[i] * g[i]
            gn = sqrt(gn)
            tol_eff = tol * (scale if scale < 1.0 else 1.0)
            ok = gn < tol_eff or gn <= STALL_REL * scale or gn <= TINY_GRAD
            if gn < tol_eff:
                if extra >= POLISH_STEPS or gn == 0.0:
                    status = 0
                    break
                extra += 1
            if it >= max_iter:
                status = 0 if ok else 1
                break
            for i in range(dim):
                neg[i] = -g[i]
            _chol_solve(H, neg, d, dim)
            gd = 0.0
            for i in range(dim):
                gd += g[i] * d[i]
            if not gd < 0.0:
                status = 0 if ok else 3
                break
            t = 1.0
            accepted = 0
            while t >= MIN_STEP:
                for i in range(dim):
                    wt[i] = w[i] + t * d[i]
                wt[2] = wt[2] if uo else 0.0
                Et = _fric_energy(cv, av, kv, wt, uo, eps)
                if Et <= E + ARMIJO * t * gd:
                    accepted = 1
                    break
                if t == 1.0 and fabs(Et - E) <= _flat_tol(E, scale):
                    # energy differences are at round-off level; compare gradients
                    _fric_full(cv, av, kv, wt, uo, eps, gt, Ht, &st)
                    gnt = 0.0
                    for i in range(dim):
                        gnt += gt[i] * gt[i]
                    if sqrt(gnt) < gn:
                        accepted = 1
                        break
                t *= 0.5
            moved = 0
            for i in range(dim):
                wt[i] = w[i] + t * d[i]
                if wt[i] != w[i]:
                    moved = 1
            if not accepted or not moved:
                status = 0 if ok else 3
                break
            for i in range(dim):
                w[i] = wt[i]
            E = _fric_full(cv, av, kv, w, uo, eps, g, H, &scale)
            it += 1
    out = np.zeros(3)
    out[0] = w[0]
    out[1] = w[1]
    out[2] = w[2] if use_omega else 0.0
    return out, E, it, gn, status

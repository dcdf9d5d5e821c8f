"""Frictional damping against the lagged separating plane.

The frame is frozen at time ``t``: plane ``p = (n, o)`` from the converged
contact, normal-force magnitudes ``|P'(q)| |n|`` and a tangent basis ``B``.
Each vertex contributes

    c_m * sqrt(|B^T (X1 - X0) / dt - omega B^T (n x X0) - u|^2 + eps)

with ``c_m = mu * dt * A_eps(|f_m|)``, and the potential is the minimum of
the sum over the plane velocity ``(u, omega)``.  Derivatives are taken with
respect to the stacked vertices at ``t + 1`` (``X1``) and ``t`` (``X0``);
the ``X0`` derivatives include the motion of the frame itself through the
contact plane's sensitivity.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .barrier import BarrierParams, barrier_terms, smooth_abs
from .contact import ContactResult, ContactSolverError, contact_derivatives
from .kinematics import skew

DEGENERATE_REL = 1e-12


def tangent_basis(n, derivative: bool = False):
    """Orthonormal tangent basis ``B`` (3 x 2) of ``n``.

    The first column is the coordinate axis least aligned with ``n``
    (lowest index on ties), orthogonalised against ``n``; the second is
    ``n_hat x b1``.  With ``derivative=True`` also returns ``dB/dn`` of
    shape (3, 2, 3).
    """
    n = np.asarray(n, dtype=float)
    nn = float(np.linalg.norm(n))
    nh = n / nn
    e = np.zeros(3)
    e[int(np.argmin(np.abs(nh)))] = 1.0
    u1 = e - (e @ nh) * nh
    l1 = float(np.linalg.norm(u1))
    b1 = u1 / l1
    b2 = np.cross(nh, b1)
    B = np.column_stack([b1, b2])
    if not derivative:
        return B
    dnh = (np.eye(3) - np.outer(nh, nh)) / nn
    du1 = -(np.outer(nh, e) + (e @ nh) * np.eye(3)) @ dnh
    db1 = (np.eye(3) - np.outer(b1, b1)) / l1 @ du1
    db2 = -skew(b1) @ dnh + skew(nh) @ db1
    return B, np.stack([db1, db2], axis=1)


@dataclass
class FrictionFrame:
    """Time-``t`` quantities that the friction potential is built from."""

    X0: np.ndarray
    n_a: int
    plane: np.ndarray
    basis: np.ndarray
    coeff: np.ndarray
    force_mag: np.ndarray
    normal_forces: np.ndarray
    q: np.ndarray
    sigma: np.ndarray
    mu: float
    dt: float
    eps: float
    contact: ContactResult | None = None

    @property
    def normal(self) -> np.ndarray:
        return self.plane[:3]

    @property
    def active(self) -> bool:
        return bool(np.any(self.coeff > 0.0))


@dataclass
class FrictionResult:
    value: float
    u: np.ndarray
    omega: float
    use_omega: bool
    iterations: int = 0


@dataclass
class FrictionDerivatives:
    value: float
    grad_x1: np.ndarray
    hess_x1: np.ndarray | None
    grad_x0: np.ndarray | None = None
    hess_x1x0: np.ndarray | None = None


def friction_frame(A0, B0, contact: ContactResult, params: BarrierParams, mu: float, dt: float) -> FrictionFrame:
    """Build the frozen friction frame from a converged contact at time ``t``."""
    X0 = np.vstack([np.asarray(A0, dtype=float), np.asarray(B0, dtype=float)])
    n_a = len(A0)
    p = np.asarray(contact.plane, dtype=float)
    n = p[:3]
    sigma = np.concatenate([-np.ones(n_a), np.ones(len(X0) - n_a)])
    q = np.concatenate([contact.q_a, contact.q_b])
    _, d1, _ = barrier_terms(q, params.s)
    mag = np.abs(d1) * float(np.linalg.norm(n))
    coeff = mu * dt * smooth_abs(mag, params.eps)[0]
    forces = -(d1 * sigma)[:, None] * n[None, :]
    return FrictionFrame(X0, n_a, p, tangent_basis(n), coeff, mag, forces, q, sigma, float(mu), float(dt),
                         params.eps, contact)


def _rows(frame: FrictionFrame, X1, alpha: float = 0.0):
    idx = np.nonzero(frame.coeff > 0.0)[0]
    B = frame.basis
    X0 = frame.X0[idx]
    a = (np.asarray(X1, dtype=float)[idx] - X0) @ B / frame.dt
    pivot = X0 + alpha * B[:, 0]
    k = np.cross(frame.normal, pivot) @ B
    return idx, a, k


def _degenerate(k) -> bool:
    if len(k) <= 1:
        return True
    spread = float(np.max(np.linalg.norm(k - k[0], axis=1)))
    return spread <= DEGENERATE_REL * max(1.0, float(np.max(np.linalg.norm(k, axis=1))))


def inner_dissipation(frame: FrictionFrame, X1, u, omega: float, alpha: float = 0.0) -> float:
    """Dissipation for a given plane velocity ``(u, omega)``."""
    idx, a, k = _rows(frame, X1, alpha)
    if len(idx) == 0:
        return 0.0
    r = a - omega * k - np.asarray(u, dtype=float)
    return float(frame.coeff[idx] @ np.sqrt(np.sum(r * r, axis=1) + frame.eps))


def solve_friction(frame: FrictionFrame, X1, warm=None, alpha: float = 0.0, tol: float = 1e-8,
                   max_iter: int = 100, backend=None) -> FrictionResult:
    """Minimise the dissipation over the plane velocity."""
    idx, a, k = _rows(frame, X1, alpha)
    if len(idx) == 0:
        return FrictionResult(0.0, np.zeros(2), 0.0, False, 0)
    use_omega = not _degenerate(k)
    w0 = np.zeros(3) if warm is None else np.asarray(warm, dtype=float)
    impl = backend or kernels
    w, E, it, gn, status = impl.friction_solve(frame.coeff[idx], a, k, w0, use_omega, frame.eps, tol, max_iter)
    if status != kernels.STATUS_OK:
        raise ContactSolverError(f"plane-velocity solve failed (status {status}, |grad| {gn:.3e})")
    return FrictionResult(float(E), w[:2].copy(), float(w[2]), use_omega, int(it))


# local variable layout of one vertex term
_X1, _X0, _U, _W, _N, _B1, _B2, _C = (slice(0, 3), slice(3, 6), slice(6, 8), 8, slice(9, 12),
                                       slice(12, 15), slice(15, 18), 18)
_NLOC = 19


def _local_terms(frame: FrictionFrame, X1, res: FrictionResult, idx):
    """Per-vertex gradients (m, 19) and Hessians (m, 19, 19) of ``c * phi``."""
    dt = frame.dt
    n = frame.normal
    B = frame.basis
    X0 = frame.X0[idx]
    c = frame.coeff[idx]
    om = res.omega
    m = len(idx)
    v = (np.asarray(X1, dtype=float)[idx] - X0) / dt - om * np.cross(n, X0)
    r = v @ B - res.u
    phi = np.sqrt(np.sum(r * r, axis=1) + frame.eps)
    rho = r / phi[:, None]

    Jv = np.zeros((m, 3, _NLOC))
    Jv[:, :, _X1] = np.eye(3) / dt
    Jv[:, :, _X0] = -np.eye(3) / dt - om * skew(n)
    Jv[:, :, _W] = -np.cross(n, X0)
    Jv[:, :, _N] = om * np.array([skew(x) for x in X0])

    Jr = np.einsum("kl,mkj->mlj", B, Jv)
    Jr[:, 0, 6] -= 1.0
    Jr[:, 1, 7] -= 1.0
    Jr[:, 0, _B1] += v
    Jr[:, 1, _B2] += v

    R2 = np.zeros((m, 2, _NLOC, _NLOC))
    for l, bsl in enumerate((_B1, _B2)):
        b = B[:, l]
        R2[:, l, _W, _X0] = np.cross(n, b)
        R2[:, l, _W, _N] = np.cross(b, X0)
        R2[:, l, _N, _X0] = om * skew(b)
        R2[:, l, bsl, :] += Jv
    R2 = R2 + np.swapaxes(R2, 2, 3)
    grad = c[:, None] * np.einsum("ml,mlj->mj", rho, Jr)
    grad[:, _C] += phi
    Hphi = np.eye(2)[None] / phi[:, None, None] - np.einsum("mk,ml->mkl", r, r) / phi[:, None, None] ** 3
    hess = np.einsum("mki,mkl,mlj->mij", Jr, Hphi, Jr) + np.einsum("ml,mlij->mij", rho, R2)
    hess *= c[:, None, None]
    cross = np.einsum("ml,mlj->mj", rho, Jr)
    hess[:, _C, :] += cross
    hess[:, :, _C] += cross
    return grad, hess


def _global_index(idx, N: int):
    """Map local slots to the global layout ``[X1, X0, u, omega, n, b1, b2, c]``."""
    base_w = 6 * N
    out = np.zeros((len(idx), _NLOC), dtype=int)
    for row, mm in enumerate(idx):
        out[row, _X1] = np.arange(3 * mm, 3 * mm + 3)
        out[row, _X0] = 3 * N + np.arange(3 * mm, 3 * mm + 3)
        out[row, 6:9] = base_w + np.arange(3)
        out[row, 9:18] = base_w + 3 + np.arange(9)
        out[row, _C] = base_w + 12 + mm
    return out


def friction_derivatives(frame: FrictionFrame, X1, res: FrictionResult, params: BarrierParams | None = None,
                         full: bool = False) -> FrictionDerivatives:
    """Envelope gradient and implicit-function Hessian of the friction potential.

    ``hess_x1`` is ``d^2 U / dX1^2``.  With ``full=True`` the total
    derivatives with respect to ``X0`` are added: ``grad_x0`` and the mixed
    block ``hess_x1x0 = d^2 U / dX1 dX0``, both including the dependence of
    the frame (plane normal, basis, force magnitudes) on ``X0``.
    """
    X0 = frame.X0
    N = len(X0)
    idx = np.nonzero(frame.coeff > 0.0)[0]
    if len(idx) == 0:
        z = np.zeros((3 * N, 3 * N))
        return FrictionDerivatives(0.0, np.zeros((N, 3)), z, np.zeros((N, 3)) if full else None,
                                   z.copy() if full else None)
    g_loc, h_loc = _local_terms(frame, X1, res, idx)
    G = _global_index(idx, N)
    dim = 7 * N + 12
    grad = np.zeros(dim)
    hess = np.zeros((dim, dim))
    np.add.at(grad, G, g_loc)
    np.add.at(hess, (G[:, :, None], G[:, None, :]), h_loc)

    wsel = np.arange(6 * N, 6 * N + (3 if res.use_omega else 2))
    if not res.use_omega:
        # omega is pinned at zero when the dissipation cannot see it
        hess[6 * N + 2, :] = 0.0
        hess[:, 6 * N + 2] = 0.0
    Hww = hess[np.ix_(wsel, wsel)]
    try:
        corr = np.linalg.solve(Hww, hess[wsel, :])
    except np.linalg.LinAlgError as exc:
        raise ContactSolverError("singular plane-velocity Hessian") from exc
    schur = hess - hess[:, wsel] @ corr
    s1 = slice(0, 3 * N)
    out = FrictionDerivatives(res.value, grad[s1].reshape(N, 3), 0.5 * (schur[s1, s1] + schur[s1, s1].T))
    if not full:
        return out
    if params is None:
        raise ValueError("params are required for the full derivatives")
    Xi = frame_sensitivity(frame, params)
    s0 = slice(3 * N, 6 * N)
    sx = slice(6 * N + 3, dim)
    out.grad_x0 = (grad[s0] + Xi.T @ grad[sx]).reshape(N, 3)
    out.hess_x1x0 = schur[s1, s0] + schur[s1, sx] @ Xi
    return out


def frame_sensitivity(frame: FrictionFrame, params: BarrierParams) -> np.ndarray:
    """``d (n, b1, b2, c) / d X0`` through the time-``t`` contact plane."""
    X0 = frame.X0
    N = len(X0)
    n_a = frame.n_a
    cd = contact_derivatives(X0[:n_a], X0[n_a:], frame.contact, params)
    dp = cd.dplane
    n = frame.normal
    nn = float(np.linalg.norm(n))
    nh = n / nn
    _, dB = tangent_basis(n, derivative=True)
    dn = dp[:3]
    out = np.zeros((9 + N, 3 * N))
    out[0:3] = dn
    out[3:6] = dB[:, 0, :] @ dn
    out[6:9] = dB[:, 1, :] @ dn
    _, d1, d2 = barrier_terms(frame.q, params.s)
    _, dA = smooth_abs(frame.force_mag, params.eps)
    Xh = np.hstack([X0, np.ones((N, 1))])
    for m in np.nonzero(frame.coeff > 0.0)[0]:
        dq = frame.sigma[m] * (Xh[m] @ dp)
        dq[3 * m:3 * m + 3] += frame.sigma[m] * n
        da = -d2[m] * nn * dq - d1[m] * (nh @ dn)
        out[9 + m] = frame.mu * frame.dt * dA[m] * da
    return out


def friction_forces(frame: FrictionFrame, X1, res: FrictionResult) -> np.ndarray:
    """Per-vertex friction forces ``-dU/dX1``."""
    return -friction_derivatives(frame, X1, res).grad_x1

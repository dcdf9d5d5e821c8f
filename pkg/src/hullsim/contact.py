"""Separating-plane contact potential between two convex hulls.

For a plane ``p = (n, o)`` with ``|n| < 1`` the inner energy is

    E(p) = P(1 - |n|) + sum_a P(-(n.a + o)) + sum_b P(n.b + o)

and the contact potential is its minimum over ``p``.  Hull ``A`` lies on the
negative side of the plane and hull ``B`` on the positive side.  All
derivatives here are with respect to the stacked world vertices
``X = [A; B]``; :func:`hullsim.kinematics.pullback` maps them to joint and
design coordinates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .barrier import BarrierParams, barrier_terms
from .geometry import gjk_distance


class PenetrationError(RuntimeError):
    """Two hulls intersect, so no separating plane exists."""


class ContactSolverError(RuntimeError):
    """The inner plane optimisation did not converge."""


@dataclass
class ContactResult:
    """Converged separating plane and the per-vertex plane-side distances."""

    value: float
    plane: np.ndarray
    q_a: np.ndarray
    q_b: np.ndarray
    iterations: int = 0
    grad_norm: float = 0.0

    @property
    def active(self) -> bool:
        return self.value > 0.0


@dataclass
class ContactDerivatives:
    value: float
    grad: np.ndarray
    hess: np.ndarray | None
    dplane: np.ndarray | None


def _norm_upper(n) -> float:
    """Largest of the ways the kernels evaluate ``|n|``."""
    x, y, z = (float(v) for v in n)
    return max(float(np.linalg.norm(n)), math.sqrt(float(n @ n)), math.sqrt(x * x + y * y + z * z))


def init_plane(xa, xb, s: float) -> np.ndarray:
    """Scaled mid-plane between witness points ``xa`` (hull A) and ``xb``."""
    xa = np.asarray(xa, dtype=float)
    xb = np.asarray(xb, dtype=float)
    gap = xb - xa
    dist = float(np.linalg.norm(gap))
    if not dist > 0.0:
        raise PenetrationError("witness points coincide")
    n = (1.0 - s) * gap / dist
    # keep the norm barrier exactly inactive however |n| is rounded
    while 1.0 - _norm_upper(n) < s:
        n *= 1.0 - 2.0 ** -52
    return np.concatenate([n, [-float(n @ (xa + xb)) / 2.0]])


def side_distances(A, B, p):
    """Barrier arguments ``(q_a, q_b)`` of every vertex for plane ``p``."""
    n, o = p[:3], p[3]
    return -(A @ n + o), B @ n + o


def inner_energy(A, B, p, s: float) -> float:
    """Inner energy at ``p``; ``inf`` outside the feasible set."""
    p = np.asarray(p, dtype=float)
    nn = float(np.linalg.norm(p[:3]))
    qa, qb = side_distances(A, B, p)
    q = np.concatenate([[1.0 - nn], qa, qb])
    terms = kernels.barrier_eval(q, s)
    if terms is None:
        return np.inf
    return float(np.sum(terms[0]))


def inner_energy_derivatives(A, B, p, s: float):
    """Value, gradient and Hessian of the inner energy in ``p``."""
    from ._pykernels import _plane_full

    E, g, H = _plane_full(np.asarray(A, float), np.asarray(B, float), np.asarray(p, float), s)[:3]
    return E, g, H


def solve_contact(A, B, params: BarrierParams, warm=None, tol: float = 1e-8, max_iter: int = 100,
                  backend=None) -> ContactResult:
    """Minimise the inner energy over the plane.

    A feasible warm start is used as the initial plane; otherwise the plane
    is built from GJK witness points.

    Raises
    ------
    PenetrationError
        If the hulls intersect.
    ContactSolverError
        If the inner Newton iteration fails.
    """
    A = np.ascontiguousarray(A, dtype=float)
    B = np.ascontiguousarray(B, dtype=float)
    s = params.s
    impl = backend or kernels
    p0 = None
    if warm is not None and np.isfinite(inner_energy(A, B, warm, s)):
        p0 = np.asarray(warm, dtype=float)
    if p0 is None:
        res = gjk_distance(A, B)
        if res.distance <= 0.0 or not res.reliable:
            raise PenetrationError(f"hulls intersect (distance {res.distance:.3e})")
        p0 = init_plane(res.witness_a, res.witness_b, s)
    p, E, it, gn, status = impl.plane_solve(A, B, p0, s, tol, max_iter)
    if status == kernels.STATUS_INFEASIBLE:
        raise PenetrationError("no feasible separating plane")
    if status != kernels.STATUS_OK:
        raise ContactSolverError(f"plane solve failed (status {status}, |grad| {gn:.3e}, {it} iterations)")
    qa, qb = side_distances(A, B, p)
    return ContactResult(float(E), p, qa, qb, int(it), float(gn))


def contact_derivatives(A, B, result: ContactResult, params: BarrierParams, order: int = 2) -> ContactDerivatives:
    """Derivatives of the contact potential in the stacked vertices.

    The gradient is the envelope gradient at the optimal plane.  The
    Hessian adds the plane-sensitivity correction
    ``-H_xp H_pp^{-1} H_px``; ``dplane`` is ``d p* / d X`` (4 x 3N).
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    X = np.vstack([A, B])
    N = len(X)
    s = params.s
    if result.value == 0.0:
        z = np.zeros((3 * N, 3 * N)) if order >= 2 else None
        dp = np.zeros((4, 3 * N)) if order >= 2 else None
        return ContactDerivatives(0.0, np.zeros((N, 3)), z, dp)
    p = result.plane
    n = p[:3]
    sigma = np.concatenate([-np.ones(len(A)), np.ones(len(B))])
    q = np.concatenate([result.q_a, result.q_b])
    _, d1, d2 = barrier_terms(q, s)
    grad = (d1 * sigma)[:, None] * n[None, :]
    if order < 2:
        return ContactDerivatives(result.value, grad, None, None)
    Xh = np.hstack([X, np.ones((N, 1))])
    # inner Hessian in p
    nn = float(np.linalg.norm(n))
    nh = n / nn
    _, e1, e2 = barrier_terms(1.0 - nn, s)
    H_pp = np.zeros((4, 4))
    outer = np.outer(nh, nh)
    H_pp[:3, :3] = e2 * outer - e1 / nn * (np.eye(3) - outer)
    H_pp += (Xh * d2[:, None]).T @ Xh
    # mixed block, one 3x4 slab per vertex
    H_xp = d2[:, None, None] * n[None, :, None] * Xh[:, None, :]
    H_xp[:, :, :3] += (sigma * d1)[:, None, None] * np.eye(3)[None]
    H_xp = H_xp.reshape(3 * N, 4)
    H_xx = np.zeros((3 * N, 3 * N))
    nnT = np.outer(n, n)
    for m in np.nonzero(d2)[0]:
        H_xx[3 * m:3 * m + 3, 3 * m:3 * m + 3] = d2[m] * nnT
    try:
        sol = np.linalg.solve(H_pp, H_xp.T)
    except np.linalg.LinAlgError as exc:
        raise ContactSolverError("singular plane Hessian at an active contact") from exc
    hess = H_xx - H_xp @ sol
    hess = 0.5 * (hess + hess.T)
    return ContactDerivatives(result.value, grad, hess, -sol)


def vertex_forces(A, B, result: ContactResult, params: BarrierParams) -> np.ndarray:
    """Per-vertex contact forces ``-dU/dx`` (stacked ``[A; B]``)."""
    return -contact_derivatives(A, B, result, params, order=1).grad


# ---------------------------------------------------------------- joint space

def pair_blocks(robot, pair):
    """``[(link, slots), (link, slots)]`` for a hull pair ``((i, j), (k, l))``."""
    (i, j), (k, l) = pair
    return [(i, list(robot.links[i].hulls[j])), (k, list(robot.links[k].hulls[l]))]


def contact_potential(kin, theta, pair, params: BarrierParams, warm=None, backend=None) -> ContactResult:
    """Contact potential of a hull pair at joint configuration ``theta``."""
    state = kin.jets(theta, 0)
    (ia, sa), (ib, sb) = pair_blocks(kin.robot, pair)
    A = kin.world_points(state, ia, sa)
    B = kin.world_points(state, ib, sb)
    return solve_contact(A, B, params, warm, backend=backend)


def contact_joint_derivatives(kin, theta, pair, params: BarrierParams, wrt_design: bool = False, warm=None):
    """Value, gradient and Hessian rows of the contact potential in ``z = [theta, d]``."""
    from .kinematics import pullback

    state = kin.jets(theta, 2, wrt_design)
    blocks = pair_blocks(kin.robot, pair)
    A = kin.world_points(state, *blocks[0])
    B = kin.world_points(state, *blocks[1])
    res = solve_contact(A, B, params, warm)
    der = contact_derivatives(A, B, res, params)
    g, H = pullback(kin, state, blocks, der.grad, der.hess)
    return res.value, g, H

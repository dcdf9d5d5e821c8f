"""Central finite-difference checks of every analytic derivative.

Each check returns a dict mapping a block name to its relative error
``|analytic - fd| / max(|fd|, floor)`` (Frobenius norms).  Inner and outer
solves are tightened so that solver tolerance does not swamp the
differencing error.
"""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from .adjoint import rollout, step_sensitivities, trajectory_gradient
from .contact import contact_derivatives, pair_blocks, solve_contact
from .dynamics import Control, Simulator, StepParams
from .friction import friction_derivatives, friction_frame, solve_friction
from .kinematics import pullback

THRESHOLDS = {"contact": 1e-4, "friction": 1e-3, "step": 1e-3, "trajectory": 1e-3}
FD_STEP = 1e-6
TIGHT_INNER = 1e-12


def rel_error(analytic, fd, floor: float = 1e-12) -> float:
    a = np.asarray(analytic, dtype=float)
    b = np.asarray(fd, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), floor))


def tight_params(params: StepParams, grad_tol: float = 1e-9) -> StepParams:
    """Copy of ``params`` with the tolerances used by finite-difference oracles."""
    return replace(params, newton=replace(params.newton, grad_tol=grad_tol, inner_tol=TIGHT_INNER))


def central_jacobian(f, x, h: float = FD_STEP) -> np.ndarray:
    """Columns ``(f(x + h e_k) - f(x - h e_k)) / 2h``."""
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((np.asarray(f(x + e), dtype=float) - np.asarray(f(x - e), dtype=float)) / (2.0 * h))
    return np.stack(cols, axis=-1)


def _pair_eval(robot, params, z, pair, order):
    r = robot.ndof
    rob = robot.with_design(z[r:], strict=False)
    sim = Simulator(rob, params)
    st = sim.kin.jets(z[:r], 2 if order else 0, True)
    blocks = pair_blocks(rob, pair)
    A = sim.kin.world_points(st, *blocks[0])
    B = sim.kin.world_points(st, *blocks[1])
    res = solve_contact(A, B, params.barrier, tol=TIGHT_INNER)
    if order == 0:
        return res.value
    der = contact_derivatives(A, B, res, params.barrier)
    return pullback(sim.kin, st, blocks, der.grad, der.hess)


def check_contact(sim: Simulator, theta, h: float = FD_STEP) -> dict:
    """Contact gradient in ``[theta, d]`` and Hessian rows, every active pair."""
    theta = np.asarray(theta, dtype=float)
    z = np.concatenate([theta, sim.robot.design_vector()])
    r = sim.ndof
    st = sim.kin.jets(theta, 0)
    worst = {"contact.grad": 0.0, "contact.hess": 0.0}
    for pair in sim.candidate_pairs(st):
        if _pair_eval(sim.robot, sim.params, z, pair, 0) == 0.0:
            continue
        g, H = _pair_eval(sim.robot, sim.params, z, pair, 2)
        g_fd = central_jacobian(lambda y: _pair_eval(sim.robot, sim.params, y, pair, 0), z, h)
        def grad_theta(y, pair=pair):
            return _pair_eval(sim.robot, sim.params, np.concatenate([y, z[r:]]), pair, 2)[0]
        H_fd = central_jacobian(grad_theta, theta, h).T
        worst["contact.grad"] = max(worst["contact.grad"], rel_error(g, g_fd))
        worst["contact.hess"] = max(worst["contact.hess"], rel_error(H, H_fd))
    return worst


def friction_pair_check(A0, B0, X1, params, mu: float, dt: float, h: float = FD_STEP) -> dict:
    """Vertex-space friction derivatives against differences of the potential."""
    X0 = np.vstack([A0, B0])
    n_a = len(A0)
    N = len(X0)

    def frame_at(X0f):
        c = solve_contact(X0f[:n_a], X0f[n_a:], params, tol=TIGHT_INNER)
        return friction_frame(X0f[:n_a], X0f[n_a:], c, params, mu, dt)

    def value(x1, x0):
        f = frame_at(x0.reshape(N, 3))
        return solve_friction(f, x1.reshape(N, 3), tol=TIGHT_INNER).value

    def grad1(x1, x0):
        f = frame_at(x0.reshape(N, 3))
        X = x1.reshape(N, 3)
        return friction_derivatives(f, X, solve_friction(f, X, tol=TIGHT_INNER)).grad_x1.ravel()

    frame = frame_at(X0)
    res = solve_friction(frame, X1, tol=TIGHT_INNER)
    der = friction_derivatives(frame, X1, res, params, full=True)
    x1, x0 = X1.ravel(), X0.ravel()
    return {
        "friction.grad_x1": rel_error(der.grad_x1.ravel(), central_jacobian(lambda y: value(y, x0), x1, h)),
        "friction.grad_x0": rel_error(der.grad_x0.ravel(), central_jacobian(lambda y: value(x1, y), x0, h)),
        "friction.hess_x1": rel_error(der.hess_x1, central_jacobian(lambda y: grad1(y, x0), x1, h)),
        "friction.hess_x1x0": rel_error(der.hess_x1x0, central_jacobian(lambda y: grad1(x1, y), x0, h)),
    }


def check_friction(sim: Simulator, theta, rng: np.random.Generator, h: float = FD_STEP) -> dict:
    """Friction derivatives for every active pair at ``theta``.

    ``X1`` is ``X0`` plus a small random displacement drawn from ``rng``.
    A frictionless scene is checked with ``mu = 0.5``.
    """
    p = sim.params
    mu = p.mu if p.mu > 0 else 0.5
    st = sim.kin.jets(np.asarray(theta, dtype=float), 0)
    worst: dict = {}
    for pair in sim.candidate_pairs(st):
        A0 = sim.hull_points(st, pair[0])
        B0 = sim.hull_points(st, pair[1])
        if solve_contact(A0, B0, p.barrier, tol=TIGHT_INNER).value == 0.0:
            continue
        X0 = np.vstack([A0, B0])
        X1 = X0 + 1e-3 * rng.standard_normal(X0.shape)
        for k, v in friction_pair_check(A0, B0, X1, p.barrier, mu, p.dt, h).items():
            worst[k] = max(worst.get(k, 0.0), v)
    return worst


def check_step(sim: Simulator, theta0, theta_prev, control=None, h: float = FD_STEP) -> dict:
    """Step sensitivities against differences of the converged step."""
    params = tight_params(sim.params)
    robot = sim.robot
    r = robot.ndof
    theta0 = np.asarray(theta0, dtype=float)
    theta_prev = np.asarray(theta_prev, dtype=float)
    d0 = robot.design_vector()
    if control is None:
        control = Control(theta0.copy(), np.zeros(r))

    def step(th0=theta0, thp=theta_prev, u=None, d=d0):
        s = Simulator(robot.with_design(d, strict=False), params)
        ctrl = control if u is None else Control(u[:r], u[r:])
        return s.step(th0, thp, ctrl).theta

    base = Simulator(robot, params)
    res = base.step(theta0, theta_prev, control)
    sens = step_sensitivities(base, res.theta, res.context, res.planes, res.friction_warm)
    u0 = np.concatenate([control.target, control.dtarget])
    out = {
        "step.J_prev": rel_error(sens.J_prev, central_jacobian(lambda y: step(th0=y), theta0, h)),
        "step.J_prev2": rel_error(sens.J_prev2, central_jacobian(lambda y: step(thp=y), theta_prev, h)),
        "step.J_u": rel_error(sens.J_u, central_jacobian(lambda y: step(u=y), u0, h)),
    }
    if robot.ndesign:
        out["step.J_d"] = rel_error(sens.J_d, central_jacobian(lambda y: step(d=y), d0, h))
    return out


def check_trajectory(robot, params: StepParams, theta0, theta_prev, horizon: int, loss, policy=None, c=None,
                     h: float = FD_STEP) -> dict:
    """Adjoint trajectory gradient against differences of full rollouts."""
    params = tight_params(params)
    d0 = robot.design_vector()
    c0 = np.zeros(0) if c is None else np.asarray(c, dtype=float)

    def L(d, cc):
        s = Simulator(robot.with_design(d, strict=False), params)
        tr = rollout(s, theta0, theta_prev, horizon, policy, cc if policy is not None else None)
        return loss(s, tr.state(horizon))[0]

    sim = Simulator(robot, params)
    traj = rollout(sim, theta0, theta_prev, horizon, policy, c0 if policy is not None else None)
    gd, gc = trajectory_gradient(sim, traj, loss, policy)
    out = {}
    if robot.ndesign:
        out["trajectory.dL_dd"] = rel_error(gd, central_jacobian(lambda y: L(y, c0), d0, h))
    if policy is not None and len(c0):
        out["trajectory.dL_dc"] = rel_error(gc, central_jacobian(lambda y: L(d0, y), c0, h))
    return out

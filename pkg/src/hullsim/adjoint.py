"""Trajectory rollouts and reverse-mode derivatives through the stepper.

Each converged step satisfies ``grad O(theta1; theta0, theta_prev, u, d) = 0``.
The implicit function theorem gives every sensitivity of ``theta1`` as
``-H^{-1} M`` with ``H`` the exact (unclamped) Hessian in ``theta1`` and
``M`` the mixed second derivative.  The reverse sweep only needs products
``M^T H^{-1} lambda``, one linear solve per step.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .contact import contact_derivatives, pair_blocks
from .dynamics import Control, Simulator, StepContext, StepFailure
from .friction import friction_derivatives, solve_friction
from .kinematics import pullback, stacked_jacobian

SINGULAR_REL = 1e-10


class SensitivityFailure(RuntimeError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


@dataclass
class StepSensitivities:
    """Derivatives of ``theta1`` with respect to the step inputs.

    ``J_u`` stacks the position and velocity targets (ndof x 2 ndof).
    """

    J_prev: np.ndarray
    J_prev2: np.ndarray
    J_u: np.ndarray
    J_d: np.ndarray


@dataclass
class Linearization:
    H: np.ndarray
    M_prev: np.ndarray
    M_prev2: np.ndarray
    M_u: np.ndarray
    M_d: np.ndarray

    def solve(self, rhs, step: int | None = None):
        lam = np.linalg.eigvalsh(self.H)
        scale = max(1.0, float(np.max(np.abs(lam)))) if lam.size else 1.0
        if lam.size and float(np.min(np.abs(lam))) < SINGULAR_REL * scale:
            raise SensitivityFailure(f"step Hessian is singular (min |eig| {np.min(np.abs(lam)):.3e}); "
                                     "try a smaller time step", step)
        return np.linalg.solve(self.H, rhs)


@dataclass
class Trajectory:
    """States ``theta^{-1} .. theta^H`` with controls and per-step caches."""

    thetas: list
    controls: list
    contexts: list
    planes: list
    friction_warm: list
    design: np.ndarray
    policy_params: np.ndarray | None = None
    records: list = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return len(self.thetas) - 2

    def state(self, t: int) -> np.ndarray:
        """``theta^t`` for ``t >= -1``."""
        return self.thetas[t + 1]


def linearize(sim: Simulator, theta1, ctx: StepContext, planes: dict | None = None,
              friction_warm: dict | None = None) -> Linearization:
    """Exact Hessian and mixed blocks of the step objective at ``theta1``.

    ``planes`` and ``friction_warm`` seed the inner solves; passing the caches
    stored by the forward step makes the result reproducible.
    """
    robot = sim.robot
    kin = sim.kin
    p = sim.params
    r = robot.ndof
    nd = robot.ndesign
    dt = p.dt
    dt2 = dt * dt
    if planes is not None:
        sim.warm = {k: v.copy() for k, v in planes.items()}
    fwarm = sim.friction_warm if friction_warm is None else friction_warm
    s1 = kin.jets(theta1, 2, True)
    s0 = kin.jets(ctx.theta0, 1, True)
    sp = kin.jets(ctx.theta_prev, 1, True)
    H = np.zeros((r, r + nd))
    M0 = np.zeros((r, r))
    Mp = np.zeros((r, r))
    Md = np.zeros((r, nd))
    Mu = np.zeros((r, 2 * r))

    # inertia and gravity
    for i in ctx.x0:
        slots, w = sim._mass[i]
        x1 = kin.world_points(s1, i, slots)
        acc = x1 - 2.0 * ctx.x0[i] + ctx.x_prev[i]
        gx = w[:, None] * (acc / dt2 - p.gravity[None, :])
        J1 = kin.point_jacobian(s1, i, slots)
        J0 = kin.point_jacobian(s0, i, slots)
        Jp = kin.point_jacobian(sp, i, slots)
        wt = w / dt2
        H += np.einsum("m,mka,mkb->ab", wt, J1[:, :, :r], J1)
        H += kin.second_contraction(s1, i, slots, gx)
        cross0 = np.einsum("m,mka,mkb->ab", -2.0 * wt, J1[:, :, :r], J0)
        crossp = np.einsum("m,mka,mkb->ab", wt, J1[:, :, :r], Jp)
        M0 += cross0[:, :r]
        Mp += crossp[:, :r]
        Md += cross0[:, r:] + crossp[:, r:]

    # PD controller
    if ctx.control is not None and (p.kp > 0.0 or p.kd > 0.0):
        kp = p.kp * sim.actuated
        kd = p.kd * sim.actuated
        H[:, :r] += np.diag(2.0 * kp + 2.0 * kd / dt2)
        M0 += np.diag(-2.0 * kd / dt2)
        Mu[:, :r] = np.diag(-2.0 * kp)
        Mu[:, r:] = np.diag(-2.0 * kd / dt)

    kappa = p.contact_weight
    for pair in sim.candidate_pairs(s1):
        res = sim._solve_pair(s1, pair, tol=p.newton.inner_tol)
        if not res.active:
            continue
        blocks = pair_blocks(robot, pair)
        A = kin.world_points(s1, *blocks[0])
        B = kin.world_points(s1, *blocks[1])
        der = contact_derivatives(A, B, res, p.barrier)
        _, Hz = pullback(kin, s1, blocks, der.grad, der.hess)
        H += kappa * Hz

    for pair, frame in ctx.frames.items():
        blocks = pair_blocks(robot, pair)
        X1 = np.vstack([kin.world_points(s1, *b) for b in blocks])
        fres = solve_friction(frame, X1, fwarm.get(pair), tol=p.newton.inner_tol)
        der = friction_derivatives(frame, X1, fres, p.barrier, full=True)
        _, Hz = pullback(kin, s1, blocks, der.grad_x1, der.hess_x1)
        H += kappa * Hz
        J1 = stacked_jacobian(kin, s1, blocks)
        J0 = stacked_jacobian(kin, s0, blocks)
        cross = J1[:, :r].T @ der.hess_x1x0 @ J0
        M0 += kappa * cross[:, :r]
        Md += kappa * cross[:, r:]

    Hth = H[:, :r]
    Md += H[:, r:]
    return Linearization(0.5 * (Hth + Hth.T), M0, Mp, Mu, Md)


def step_sensitivities(sim: Simulator, theta1, ctx: StepContext, planes: dict | None = None,
                       friction_warm: dict | None = None, step: int | None = None) -> StepSensitivities:
    lin = linearize(sim, theta1, ctx, planes, friction_warm)
    X = -lin.solve(np.hstack([lin.M_prev, lin.M_prev2, lin.M_u, lin.M_d]), step)
    r = sim.ndof
    return StepSensitivities(X[:, :r], X[:, r:2 * r], X[:, 2 * r:4 * r], X[:, 4 * r:])


def rollout(sim: Simulator, theta0, theta_prev, horizon: int, policy=None, params=None) -> Trajectory:
    """Simulate ``horizon`` steps, recording everything the backward pass needs."""
    thetas = [np.asarray(theta_prev, dtype=float), np.asarray(theta0, dtype=float)]
    controls, contexts, planes, fwarm, records = [], [], [], [], []
    sim.reset_cache()
    for t in range(horizon):
        ctrl = policy.control(params, thetas[-1], thetas[-2], t) if policy is not None else None
        res = sim.step(thetas[-1], thetas[-2], ctrl, step_index=t)
        thetas.append(res.theta)
        controls.append(ctrl)
        contexts.append(res.context)
        planes.append(dict(res.planes))
        fwarm.append(dict(res.friction_warm))
        records.append(res)
    return Trajectory(thetas, controls, contexts, planes, fwarm, sim.robot.design_vector(),
                      None if params is None else np.asarray(params, dtype=float).copy(), records)


def trajectory_gradient(sim: Simulator, traj: Trajectory, loss, policy=None):
    """Reverse sweep returning ``(dL/dd, dL/dc)``.

    ``loss(sim, theta_H)`` must return ``(value, dL/dtheta_H, dL/dd)``.
    """
    H = traj.horizon
    r = sim.ndof
    _, gth, gd = loss(sim, traj.state(H))
    grad_d = np.array(gd, dtype=float)
    c = traj.policy_params
    grad_c = np.zeros(0 if c is None else len(c))
    adj = [np.zeros(r) for _ in range(H + 2)]
    adj[H + 1] = np.array(gth, dtype=float)
    for t in range(H - 1, -1, -1):
        mu = adj[t + 2]
        if not np.any(mu):
            continue
        lin = linearize(sim, traj.state(t + 1), traj.contexts[t], traj.planes[t], traj.friction_warm[t])
        s = lin.solve(mu, t)
        adj[t + 1] -= lin.M_prev.T @ s
        adj[t] -= lin.M_prev2.T @ s
        grad_d -= lin.M_d.T @ s
        if policy is not None and traj.controls[t] is not None:
            gu = -lin.M_u.T @ s
            du_dc, du_dth, du_dprev = policy.jacobians(c, traj.state(t), traj.state(t - 1), t)
            grad_c += du_dc.T @ gu
            if du_dth is not None:
                adj[t + 1] += du_dth.T @ gu
            if du_dprev is not None:
                adj[t] += du_dprev.T @ gu
    return grad_d, grad_c


def rollout_loss(sim_factory, design, theta0, theta_prev, horizon: int, loss, policy=None, params=None) -> float:
    """Loss of a fresh rollout; used by finite-difference oracles."""
    sim = sim_factory(design)
    traj = rollout(sim, theta0, theta_prev, horizon, policy, params)
    return loss(sim, traj.state(horizon))[0]


__all__ = ["Control", "Linearization", "SensitivityFailure", "StepFailure", "StepSensitivities", "Trajectory",
           "linearize", "rollout", "rollout_loss", "step_sensitivities", "trajectory_gradient"]

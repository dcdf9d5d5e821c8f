"""Incremental objective and the Newton time stepper.

One step minimises, over the next configuration ``theta1``,

    O = sum_v w_v (|x1 - 2 x0 + x_prev|^2 / (2 dt^2) - g . x1)
        + kp |target - theta1|^2 + kd |dtarget - (theta1 - theta0) / dt|^2
        + weight * sum_pairs (U_contact + U_friction)

where ``w_v`` is the lumped vertex mass.  Contact pairs are pruned with a
BVH whose boxes are inflated by the contact support distance.  Friction uses
frames frozen at the start of the step.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .barrier import BarrierParams
from .contact import (ContactResult, ContactSolverError, PenetrationError, contact_derivatives, pair_blocks,
                      solve_contact)
from .friction import FrictionFrame, friction_derivatives, friction_frame, solve_friction
from .geometry import Bvh, gjk_distance
from .kinematics import Kinematics, Robot, pullback

log = logging.getLogger(__name__)

# relative energy change treated as round-off by the line search
FLAT_REL = 1e-10
# a flat-energy Newton step shorter than this (relative to theta) counts as converged
ROUNDOFF_STEP_REL = 1e-12


class StepFailure(RuntimeError):
    """The Newton step could not reach the stopping tolerance."""

    def __init__(self, message: str, step: int | None = None, **info):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step
        self.info = info


@dataclass
class NewtonParams:
    grad_tol: float = 1e-4
    eig_floor: float = 1e-3
    max_iters: int = 200
    ls_shrink: float = 0.5
    ls_c: float = 1e-4
    min_step: float = 1e-12
    inner_tol: float = 1e-8


@dataclass
class StepParams:
    """Physical and solver parameters of a time step.

    ``rho`` overrides every link's lumped vertex mass when given.
    ``contact_weight`` multiplies the summed contact and friction terms.
    """

    dt: float = 1e-2
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    kp: float = 0.0
    kd: float = 0.0
    mu: float = 0.0
    contact_weight: float = 1.0
    rho: float | None = None
    barrier: BarrierParams = field(default_factory=BarrierParams)
    newton: NewtonParams = field(default_factory=NewtonParams)
    skip_adjacent: bool = False

    def __post_init__(self):
        self.gravity = np.asarray(self.gravity, dtype=float)
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.rho is not None and not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.kp < 0 or self.kd < 0:
            raise ValueError("kp and kd must be nonnegative")
        if not self.newton.eig_floor > 0:
            raise ValueError("eig_floor must be positive")


@dataclass
class Control:
    """PD targets for the next configuration and its velocity."""

    target: np.ndarray
    dtarget: np.ndarray


@dataclass
class StepContext:
    """Everything held fixed while solving for ``theta1``."""

    theta0: np.ndarray
    theta_prev: np.ndarray
    control: Control | None
    x0: dict
    x_prev: dict
    frames: dict
    contacts0: dict


@dataclass
class StepResult:
    theta: np.ndarray
    value: float
    iterations: int
    grad_inf: float
    active_pairs: int
    min_distance: float
    frames: dict
    planes: dict
    context: StepContext | None = None
    friction_warm: dict = field(default_factory=dict)


class Simulator:
    """Articulated hull robot plus step parameters."""

    def __init__(self, robot: Robot, params: StepParams | None = None):
        self.robot = robot
        self.kin = Kinematics(robot)
        self.params = params or StepParams()
        self.static = robot.static_links()
        self.hull_keys = [(i, j) for i, link in enumerate(robot.links) for j in range(len(link.hulls))]
        self.warm: dict = {}
        self.friction_warm: dict = {}
        self._mass = []
        for i, link in enumerate(robot.links):
            slots = robot.link_slots(i)
            counts = {s: 0 for s in slots}
            for h in link.hulls:
                for s in h:
                    counts[s] += 1
            rho = self.params.rho if self.params.rho is not None else link.mass_density
            self._mass.append((slots, rho * np.array([counts[s] for s in slots], dtype=float)))
        gains = []
        for link in robot.links:
            gains.extend([1.0 if link.joint.is_actuated else 0.0] * link.joint.ndof)
        self.actuated = np.array(gains)

    # ------------------------------------------------------------ helpers

    @property
    def ndof(self) -> int:
        return self.robot.ndof

    def link_points(self, state, i: int) -> np.ndarray:
        return self.kin.world_points(state, i, self._mass[i][0])

    def hull_points(self, state, key) -> np.ndarray:
        i, j = key
        return self.kin.world_points(state, i, list(self.robot.links[i].hulls[j]))

    def _accept_pair(self, a, b) -> bool:
        if self.static[a[0]] and self.static[b[0]]:
            return False
        if self.params.skip_adjacent:
            pa = self.robot.links[a[0]].joint.parent
            pb = self.robot.links[b[0]].joint.parent
            if pa == b[0] or pb == a[0]:
                return False
        return True

    def all_pairs(self) -> list:
        keys = self.hull_keys
        out = []
        for x in range(len(keys)):
            for y in range(x + 1, len(keys)):
                a, b = keys[x], keys[y]
                if a[0] != b[0] and self._accept_pair(a, b):
                    out.append((a, b))
        return out

    def candidate_pairs(self, state, bvh: Bvh | None = None) -> list:
        pts = [self.hull_points(state, k) for k in self.hull_keys]
        if bvh is None:
            bvh = Bvh.build(self.hull_keys, pts)
        else:
            bvh.refit(pts)
        return bvh.overlapping_pairs(self.params.barrier.support_distance, self._accept_pair)

    def _solve_pair(self, state, pair, tol=None, write=True) -> ContactResult:
        A = self.hull_points(state, pair[0])
        B = self.hull_points(state, pair[1])
        tol = self.params.newton.inner_tol if tol is None else tol
        res = solve_contact(A, B, self.params.barrier, self.warm.get(pair), tol=tol)
        if write:
            self.warm[pair] = res.plane.copy()
        return res

    def min_distance(self, theta) -> float:
        state = self.kin.jets(theta, 0)
        best = np.inf
        for a, b in self.all_pairs():
            d = gjk_distance(self.hull_points(state, a), self.hull_points(state, b)).distance
            best = min(best, d)
        return float(best)

    def check_separated(self, theta) -> list:
        """Pairs that intersect at ``theta``."""
        state = self.kin.jets(theta, 0)
        bad = []
        for a, b in self.all_pairs():
            res = gjk_distance(self.hull_points(state, a), self.hull_points(state, b))
            if res.distance <= 0.0 or not res.reliable:
                bad.append((a, b))
        return bad

    # ------------------------------------------------------------ step set-up

    def begin_step(self, theta0, theta_prev, control: Control | None = None) -> StepContext:
        theta0 = np.asarray(theta0, dtype=float)
        theta_prev = np.asarray(theta_prev, dtype=float)
        s0 = self.kin.jets(theta0, 0)
        sp = self.kin.jets(theta_prev, 0)
        x0 = {i: self.link_points(s0, i) for i in range(len(self.robot.links)) if not self.static[i]}
        xp = {i: self.link_points(sp, i) for i in x0}
        frames = {}
        contacts0 = {}
        mu = self.params.mu
        for pair in self.candidate_pairs(s0):
            res = self._solve_pair(s0, pair)
            contacts0[pair] = res
            if res.active and mu > 0.0:
                A = self.hull_points(s0, pair[0])
                B = self.hull_points(s0, pair[1])
                fr = friction_frame(A, B, res, self.params.barrier, mu, self.params.dt)
                if fr.active:
                    frames[pair] = fr
        return StepContext(theta0, theta_prev, control, x0, xp, frames, contacts0)

    # ------------------------------------------------------------ energies

    def inertia_terms(self, state, ctx: StepContext, order: int):
        """Value and point-space gradient per link."""
        dt2 = self.params.dt ** 2
        g = self.params.gravity
        value = 0.0
        grads = {}
        for i in ctx.x0:
            w = self._mass[i][1]
            x1 = self.link_points(state, i)
            acc = x1 - 2.0 * ctx.x0[i] + ctx.x_prev[i]
            value += float(w @ (0.5 * np.sum(acc * acc, axis=1) / dt2 - x1 @ g))
            if order >= 1:
                grads[i] = w[:, None] * (acc / dt2 - g[None, :])
        return value, grads

    def pd_terms(self, theta1, ctx: StepContext, order: int):
        p = self.params
        if ctx.control is None or (p.kp == 0.0 and p.kd == 0.0):
            z = np.zeros(self.ndof)
            return 0.0, z, np.zeros(self.ndof)
        kp = p.kp * self.actuated
        kd = p.kd * self.actuated
        e_p = ctx.control.target - theta1
        e_d = ctx.control.dtarget - (theta1 - ctx.theta0) / p.dt
        value = float(kp @ (e_p * e_p) + kd @ (e_d * e_d))
        grad = -2.0 * kp * e_p - 2.0 * kd * e_d / p.dt
        diag = 2.0 * kp + 2.0 * kd / p.dt**2
        return value, grad, diag

    def objective(self, theta1, ctx: StepContext, order: int = 2, prune: bool = True, write_cache: bool = True,
                  details: bool = False):
        """Objective at ``theta1`` with gradient and Hessian for ``order=2``.

        Returns ``inf`` (value only) when ``theta1`` is infeasible.
        """
        theta1 = np.asarray(theta1, dtype=float)
        state = self.kin.jets(theta1, 2 if order >= 1 else 0)
        n = self.ndof
        total, igrads = self.inertia_terms(state, ctx, order)
        pd_val, pd_grad, pd_diag = self.pd_terms(theta1, ctx, order)
        total += pd_val
        grad = pd_grad.copy() if order >= 1 else None
        hess = np.diag(pd_diag) if order >= 1 else None
        if order >= 1:
            dt2 = self.params.dt ** 2
            for i, gx in igrads.items():
                slots = self._mass[i][0]
                J = self.kin.point_jacobian(state, i, slots)
                w = self._mass[i][1]
                grad += np.einsum("mk,mkb->b", gx, J)
                hess += np.einsum("m,mka,mkb->ab", w / dt2, J, J)
                hess += self.kin.second_contraction(state, i, slots, gx)
        kappa = self.params.contact_weight
        pairs = self.candidate_pairs(state) if prune else self.all_pairs()
        active = 0
        info = {"pairs": len(pairs)}
        for pair in pairs:
            try:
                res = self._solve_pair(state, pair, write=write_cache)
            except PenetrationError:
                if order >= 1:
                    raise
                return np.inf
            if not res.active:
                continue
            active += 1
            total += kappa * res.value
            if order >= 1:
                blocks = pair_blocks(self.robot, pair)
                A = self.kin.world_points(state, *blocks[0])
                B = self.kin.world_points(state, *blocks[1])
                der = contact_derivatives(A, B, res, self.params.barrier)
                g_z, H_z = pullback(self.kin, state, blocks, der.grad, der.hess)
                grad += kappa * g_z
                hess += kappa * H_z
        for pair, frame in ctx.frames.items():
            blocks = pair_blocks(self.robot, pair)
            X1 = np.vstack([self.kin.world_points(state, *b) for b in blocks])
            fres = solve_friction(frame, X1, self.friction_warm.get(pair), tol=self.params.newton.inner_tol)
            if write_cache:
                self.friction_warm[pair] = np.array([*fres.u, fres.omega])
            total += kappa * fres.value
            if order >= 1:
                der = friction_derivatives(frame, X1, fres)
                g_z, H_z = pullback(self.kin, state, blocks, der.grad_x1, der.hess_x1)
                grad += kappa * g_z
                hess += kappa * H_z
        if order == 0:
            return total
        hess = 0.5 * (hess + hess.T)
        if details:
            info["active"] = active
            return total, grad, hess, info
        return total, grad, hess

    # ------------------------------------------------------------ stepping

    def step(self, theta0, theta_prev, control: Control | None = None, step_index: int | None = None) -> StepResult:
        """Advance one step by Newton's method with a backtracking line search.

        Raises
        ------
        StepFailure
            On line-search underflow or when the iteration limit is hit.
        """
        nt = self.params.newton
        try:
            ctx = self.begin_step(theta0, theta_prev, control)
        except (PenetrationError, ContactSolverError) as exc:
            raise StepFailure(f"start state infeasible: {exc}", step_index) from exc
        theta = np.array(theta0, dtype=float)
        if self.ndof == 0:
            return StepResult(theta, 0.0, 0, 0.0, 0, self.min_distance(theta), ctx.frames, {}, ctx)
        try:
            E, g, H, info = self.objective(theta, ctx, 2, details=True)
        except (PenetrationError, ContactSolverError) as exc:
            raise StepFailure(f"initial state infeasible: {exc}", step_index) from exc
        it = 0
        while True:
            ginf = float(np.max(np.abs(g)))
            if ginf < nt.grad_tol:
                break
            if it >= nt.max_iters:
                raise StepFailure(f"Newton did not converge in {nt.max_iters} iterations (|g|inf={ginf:.3e})",
                                  step_index, grad_inf=ginf)
            lam, V = np.linalg.eigh(H)
            lam = np.maximum(lam, nt.eig_floor)
            d = -V @ ((V.T @ g) / lam)
            gd = float(g @ d)
            t = 1.0
            accepted = None
            at_roundoff = False
            while True:
                try:
                    Et = self.objective(theta + t * d, ctx, 0, write_cache=False)
                except ContactSolverError:
                    Et = np.inf
                if Et <= E + nt.ls_c * t * gd and Et < E:
                    break
                if t == 1.0 and abs(Et - E) <= FLAT_REL * max(abs(E), 1.0):
                    # energy differences are at round-off level
                    if np.max(np.abs(d)) <= ROUNDOFF_STEP_REL * max(1.0, float(np.max(np.abs(theta)))):
                        # stiff contacts lift the gradient's noise floor above grad_tol
                        at_roundoff = True
                        break
                    # otherwise fall back to the gradient norm
                    try:
                        trial = self.objective(theta + d, ctx, 2, details=True)
                    except (PenetrationError, ContactSolverError):
                        trial = None
                    if trial is not None and np.linalg.norm(trial[1]) < np.linalg.norm(g):
                        accepted = trial
                        break
                t *= nt.ls_shrink
                if t < nt.min_step:
                    raise StepFailure(f"line search underflow at Newton iteration {it} (|g|inf={ginf:.3e}, "
                                      f"objective={E:.6e})", step_index, grad_inf=ginf, iteration=it)
            if at_roundoff:
                log.debug("step %s: stopped at round-off, |g|inf=%.3e", step_index, ginf)
                break
            theta = theta + t * d
            if accepted is not None:
                E, g, H, info = accepted
            else:
                try:
                    E, g, H, info = self.objective(theta, ctx, 2, details=True)
                except (PenetrationError, ContactSolverError) as exc:
                    raise StepFailure(f"accepted iterate infeasible: {exc}", step_index) from exc
            it += 1
        planes = {k: v.copy() for k, v in self.warm.items()}
        fwarm = {k: v.copy() for k, v in self.friction_warm.items()}
        return StepResult(theta, float(E), it, ginf, info["active"], self.min_distance(theta), ctx.frames, planes,
                          ctx, fwarm)

    def reset_cache(self) -> None:
        self.warm.clear()
        self.friction_warm.clear()


def inertia_energy(sim: Simulator, theta1, theta0, theta_prev) -> float:
    ctx = sim.begin_step(theta0, theta_prev, None)
    return sim.inertia_terms(sim.kin.jets(theta1, 0), ctx, 0)[0]


def pd_energy(sim: Simulator, theta1, theta0, control: Control) -> float:
    ctx = StepContext(np.asarray(theta0, float), np.asarray(theta0, float), control, {}, {}, {}, {})
    return sim.pd_terms(np.asarray(theta1, float), ctx, 0)[0]


def total_objective(sim: Simulator, theta1, theta0, theta_prev, control: Control | None = None, order: int = 2):
    ctx = sim.begin_step(theta0, theta_prev, control)
    return sim.objective(theta1, ctx, order)

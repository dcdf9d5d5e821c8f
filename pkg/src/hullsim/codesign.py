"""Control policies, terminal losses and the co-design optimisation loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .adjoint import SensitivityFailure, rollout, trajectory_gradient
from .contact import ContactSolverError, PenetrationError
from .dynamics import Control, Simulator, StepFailure, StepParams
from .kinematics import Robot

log = logging.getLogger(__name__)

N_WAVES = 4


class CodesignError(RuntimeError):
    """Optimisation aborted after repeated rollout failures."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


# ---------------------------------------------------------------- policies

class Policy:
    """Open-loop target generator ``u^t = pi(theta^t, theta^{t-1}, t, c)``.

    Targets are for ``theta^{t+1}``, i.e. time ``(t + 1) dt``.  The velocity
    target is the analytic time derivative of the position target.
    """

    kind = "policy"

    def __init__(self, ndof: int, dt: float):
        self.ndof = ndof
        self.dt = dt

    @property
    def nparams(self) -> int:
        raise NotImplementedError

    def _eval(self, c, time):
        """Return ``(target, dtarget, d target/dc, d dtarget/dc)``."""
        raise NotImplementedError

    def control(self, c, theta, theta_prev, t: int) -> Control:
        pos, vel, _, _ = self._eval(np.asarray(c, dtype=float), (t + 1) * self.dt)
        return Control(pos, vel)

    def jacobians(self, c, theta, theta_prev, t: int):
        """``(du/dc, du/dtheta, du/dtheta_prev)``; ``None`` marks a zero block."""
        _, _, dp, dv = self._eval(np.asarray(c, dtype=float), (t + 1) * self.dt)
        return np.vstack([dp, dv]), None, None

    def to_dict(self) -> dict:
        return {"kind": self.kind}


class ConstantPolicy(Policy):
    """Fixed pose target ``c`` with zero velocity target."""

    kind = "constant"

    @property
    def nparams(self) -> int:
        return self.ndof

    def _eval(self, c, time):
        r = self.ndof
        return c.copy(), np.zeros(r), np.eye(r), np.zeros((r, r))


class SinePolicy(Policy):
    """Bias plus four harmonics of a per-dof base frequency.

    Parameters per dof are ``[bias, a_1..a_4, phi_1..phi_4, f]`` and the
    target is ``bias + sum_k a_k sin(k f tau + phi_k)``.
    """

    kind = "sine"
    width = 2 + 2 * N_WAVES

    @property
    def nparams(self) -> int:
        return self.width * self.ndof

    def initial(self, bias=None, freq: float = 2.0 * np.pi) -> np.ndarray:
        c = np.zeros((self.ndof, self.width))
        if bias is not None:
            c[:, 0] = bias
        c[:, -1] = freq
        return c.ravel()

    def _eval(self, c, time):
        r, w = self.ndof, self.width
        C = c.reshape(r, w)
        bias, amp, phase, freq = C[:, 0], C[:, 1:1 + N_WAVES], C[:, 1 + N_WAVES:1 + 2 * N_WAVES], C[:, -1]
        k = np.arange(1, N_WAVES + 1, dtype=float)
        arg = k[None, :] * freq[:, None] * time + phase
        sn, cs = np.sin(arg), np.cos(arg)
        kf = k[None, :] * freq[:, None]
        pos = bias + np.sum(amp * sn, axis=1)
        vel = np.sum(amp * kf * cs, axis=1)
        dp = np.zeros((r, r, w))
        dv = np.zeros((r, r, w))
        idx = np.arange(r)
        dp[idx, idx, 0] = 1.0
        dp[idx, idx, 1:1 + N_WAVES] = sn
        dp[idx, idx, 1 + N_WAVES:1 + 2 * N_WAVES] = amp * cs
        dp[idx, idx, -1] = np.sum(amp * cs * k[None, :] * time, axis=1)
        dv[idx, idx, 1:1 + N_WAVES] = kf * cs
        dv[idx, idx, 1 + N_WAVES:1 + 2 * N_WAVES] = -amp * kf * sn
        dv[idx, idx, -1] = np.sum(amp * k[None, :] * (cs - kf * time * sn), axis=1)
        return pos, vel, dp.reshape(r, r * w), dv.reshape(r, r * w)


class CubicPolicy(Policy):
    """Cubic polynomial in normalised time ``s = tau / duration`` per dof."""

    kind = "cubic"

    def __init__(self, ndof: int, dt: float, duration: float):
        super().__init__(ndof, dt)
        if not duration > 0:
            raise ValueError("duration must be positive")
        self.duration = duration

    @property
    def nparams(self) -> int:
        return 4 * self.ndof

    def _eval(self, c, time):
        r = self.ndof
        C = c.reshape(r, 4)
        s = time / self.duration
        basis = np.array([1.0, s, s * s, s ** 3])
        dbasis = np.array([0.0, 1.0, 2.0 * s, 3.0 * s * s]) / self.duration
        dp = np.zeros((r, r, 4))
        dv = np.zeros((r, r, 4))
        idx = np.arange(r)
        dp[idx, idx] = basis
        dv[idx, idx] = dbasis
        return C @ basis, C @ dbasis, dp.reshape(r, 4 * r), dv.reshape(r, 4 * r)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "duration": self.duration}


def make_policy(kind: str, ndof: int, dt: float, **kw) -> Policy:
    if kind == "constant":
        return ConstantPolicy(ndof, dt)
    if kind == "sine":
        return SinePolicy(ndof, dt)
    if kind == "cubic":
        return CubicPolicy(ndof, dt, kw["duration"])
    raise ValueError(f"unknown policy kind {kind!r}")


def policy_eval(policy: Policy, c, theta, theta_prev, t: int):
    """Control signal and its derivatives ``(u, du/dc, du/dtheta, du/dtheta_prev)``."""
    u = policy.control(c, theta, theta_prev, t)
    return (u, *policy.jacobians(c, theta, theta_prev, t))


# ---------------------------------------------------------------- losses

class PointTargetLoss:
    """``0.5 w |x - target|^2`` for a vertex slot of a link in world space."""

    def __init__(self, link: int, slot: int, target, weight: float = 1.0):
        self.link = link
        self.slot = slot
        self.target = np.asarray(target, dtype=float)
        self.weight = weight

    def __call__(self, sim: Simulator, theta):
        st = sim.kin.jets(theta, 1, True)
        x = sim.kin.world_points(st, self.link, [self.slot])[0]
        J = sim.kin.point_jacobian(st, self.link, [self.slot])[0]
        e = x - self.target
        g = self.weight * (e @ J)
        r = sim.ndof
        return 0.5 * self.weight * float(e @ e), g[:r], g[r:]

    def to_dict(self) -> dict:
        return {"kind": "point", "link": self.link, "slot": self.slot, "target": self.target.tolist(),
                "weight": self.weight}


class ComTargetLoss:
    """``0.5 w |com - target|^2`` for the lumped-mass centre of some links."""

    def __init__(self, links, target, weight: float = 1.0):
        self.links = list(links)
        self.target = np.asarray(target, dtype=float)
        self.weight = weight

    def com(self, sim: Simulator, theta, order: int = 1):
        st = sim.kin.jets(theta, order, True)
        total = 0.0
        x = np.zeros(3)
        J = np.zeros((3, st.n))
        for i in self.links:
            slots, w = sim._mass[i]
            x += w @ sim.kin.world_points(st, i, slots)
            if order:
                J += np.einsum("m,mkb->kb", w, sim.kin.point_jacobian(st, i, slots))
            total += float(w.sum())
        return x / total, J / total

    def __call__(self, sim: Simulator, theta):
        x, J = self.com(sim, theta)
        e = x - self.target
        g = self.weight * (e @ J)
        r = sim.ndof
        return 0.5 * self.weight * float(e @ e), g[:r], g[r:]

    def to_dict(self) -> dict:
        return {"kind": "com", "links": self.links, "target": self.target.tolist(), "weight": self.weight}


class RelativeComLoss:
    """``0.5 w |com(a) - com(b) - offset|^2``, a grasp-style penalty."""

    def __init__(self, links_a, links_b, offset=None, weight: float = 1.0):
        self.a = ComTargetLoss(links_a, np.zeros(3))
        self.b = ComTargetLoss(links_b, np.zeros(3))
        self.offset = np.zeros(3) if offset is None else np.asarray(offset, dtype=float)
        self.weight = weight

    def __call__(self, sim: Simulator, theta):
        xa, Ja = self.a.com(sim, theta)
        xb, Jb = self.b.com(sim, theta)
        e = xa - xb - self.offset
        g = self.weight * (e @ (Ja - Jb))
        r = sim.ndof
        return 0.5 * self.weight * float(e @ e), g[:r], g[r:]

    def to_dict(self) -> dict:
        return {"kind": "relative_com", "links_a": self.a.links, "links_b": self.b.links,
                "offset": self.offset.tolist(), "weight": self.weight}


class JointTargetLoss:
    """``0.5 w |theta - target|^2`` over the listed coordinates."""

    def __init__(self, target, dofs=None, weight: float = 1.0):
        self.target = np.asarray(target, dtype=float)
        self.dofs = None if dofs is None else list(dofs)
        self.weight = weight

    def __call__(self, sim: Simulator, theta):
        idx = np.arange(sim.ndof) if self.dofs is None else np.array(self.dofs)
        e = np.asarray(theta, dtype=float)[idx] - self.target
        g = np.zeros(sim.ndof)
        g[idx] = self.weight * e
        return 0.5 * self.weight * float(e @ e), g, np.zeros(sim.robot.ndesign)

    def to_dict(self) -> dict:
        return {"kind": "joint", "target": self.target.tolist(), "dofs": self.dofs, "weight": self.weight}


def make_loss(block: dict):
    kind = block["kind"]
    w = float(block.get("weight", 1.0))
    if kind == "point":
        return PointTargetLoss(int(block["link"]), int(block["slot"]), block["target"], w)
    if kind == "com":
        return ComTargetLoss(block["links"], block["target"], w)
    if kind == "relative_com":
        return RelativeComLoss(block["links_a"], block["links_b"], block.get("offset"), w)
    if kind == "joint":
        return JointTargetLoss(block["target"], block.get("dofs"), w)
    raise ValueError(f"unknown loss kind {kind!r}")


# ---------------------------------------------------------------- updates

def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sorted thresholds)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, len(v) + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    tau = css[rho] / (rho + 1.0)
    w = np.maximum(v - tau, 0.0)
    # absorb round-off so the weights sum to one
    j = int(np.argmax(w))
    w[j] += 1.0 - w.sum()
    return w


def clamp_norm(step, radius: float) -> np.ndarray:
    step = np.asarray(step, dtype=float)
    n = float(np.linalg.norm(step))
    if n > radius:
        return step * (radius / n) if n > 0 else step
    return step


def project_design(d, weight_blocks) -> np.ndarray:
    d = np.array(d, dtype=float)
    for off, n in weight_blocks:
        d[off:off + n] = project_simplex(d[off:off + n])
    return d


def project_update(d, c, grad_d, grad_c, radius_d: float, radius_c: float, weight_blocks=(), lr_d=None,
                   lr_c=None):
    """Trust-region step on the linearised loss followed by projection.

    With ``lr`` unset the step is ``-radius * grad / |grad|``, the exact
    minimiser of the linearised loss on the ball; otherwise ``-lr * grad``
    clamped to the radius.  Attachment weights are then projected onto the
    simplex, which cannot lengthen the step since ``d`` is feasible.
    """
    def step(g, radius, lr):
        g = np.asarray(g, dtype=float)
        n = float(np.linalg.norm(g))
        if n == 0.0 or radius == 0.0:
            return np.zeros_like(g)
        if lr is None:
            return -radius * g / n
        return clamp_norm(-lr * g, radius)

    d_new = project_design(np.asarray(d, dtype=float) + step(grad_d, radius_d, lr_d), weight_blocks)
    c_new = np.asarray(c, dtype=float) + step(grad_c, radius_c, lr_c)
    return d_new, c_new


@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    t: int = 0

    def step(self, grad) -> np.ndarray:
        g = np.asarray(grad, dtype=float)
        if self.m is None:
            self.m = np.zeros_like(g)
            self.v = np.zeros_like(g)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * g
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * g * g
        mh = self.m / (1.0 - self.beta1 ** self.t)
        vh = self.v / (1.0 - self.beta2 ** self.t)
        return -self.lr * mh / (np.sqrt(vh) + self.eps)


# ---------------------------------------------------------------- problem

@dataclass
class CodesignProblem:
    """Terminal-loss co-design over design ``d`` and policy parameters ``c``.

    ``design_mask`` selects the design coordinates that may change; the
    rest stay at their initial values.
    """

    robot: Robot
    params: StepParams
    theta0: np.ndarray
    theta_prev: np.ndarray
    policy: Policy | None
    c0: np.ndarray
    loss: object
    horizon: int
    radius_d: float
    radius_c: float
    optimizer: str = "adam"
    betas: tuple = (0.9, 0.999)
    lr_d: float | None = None
    lr_c: float | None = None
    design_mask: np.ndarray | None = None
    seed: int = 0
    max_retries: int = 5

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.radius_d < 0 or self.radius_c < 0:
            raise ValueError("trust radii must be nonnegative")
        if self.optimizer not in ("adam", "projected_gradient"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        self.c0 = np.asarray(self.c0, dtype=float)
        self.theta0 = np.asarray(self.theta0, dtype=float)
        self.theta_prev = np.asarray(self.theta_prev, dtype=float)
        if self.design_mask is None:
            self.design_mask = np.ones(self.robot.ndesign, dtype=bool)
        self.design_mask = np.asarray(self.design_mask, dtype=bool)

    def simulator(self, d) -> Simulator:
        return Simulator(self.robot.with_design(d), self.params)

    def evaluate(self, d, c, gradient: bool = True):
        """Loss (and gradients) of one rollout from the initial state."""
        sim = self.simulator(d)
        traj = rollout(sim, self.theta0, self.theta_prev, self.horizon, self.policy, c)
        value = self.loss(sim, traj.state(self.horizon))[0]
        if not gradient:
            return value, None, None
        gd, gc = trajectory_gradient(sim, traj, self.loss, self.policy)
        return value, gd, gc


@dataclass
class History:
    loss: list = field(default_factory=list)
    design: list = field(default_factory=list)
    params: list = field(default_factory=list)
    radius_d: list = field(default_factory=list)
    radius_c: list = field(default_factory=list)

    def append(self, loss, d, c, rd, rc):
        self.loss.append(float(loss))
        self.design.append(np.array(d))
        self.params.append(np.array(c))
        self.radius_d.append(rd)
        self.radius_c.append(rc)


ROLLOUT_ERRORS = (StepFailure, SensitivityFailure, PenetrationError, ContactSolverError)


def codesign_optimize(problem: CodesignProblem, iters: int, callback=None) -> History:
    """Alternate rollout, adjoint gradient and projected update.

    Records the loss of every accepted iterate; the final entry is the loss
    after the last update.  A failed rollout halves both trust radii and
    retries from the last good iterate.

    Raises
    ------
    CodesignError
        After ``max_retries`` consecutive failures.
    """
    pr = problem
    blocks = pr.robot.weight_blocks()
    mask = pr.design_mask.astype(float)
    d = pr.robot.design_vector()
    c = pr.c0.copy()
    rd, rc = pr.radius_d, pr.radius_c
    adam_d = Adam(pr.lr_d if pr.lr_d is not None else rd, *pr.betas)
    adam_c = Adam(pr.lr_c if pr.lr_c is not None else rc, *pr.betas)
    hist = History()
    value, gd, gc = pr.evaluate(d, c)
    for k in range(iters + 1):
        hist.append(value, d, c, rd, rc)
        if callback is not None:
            callback(k, value, d, c)
        if k == iters:
            break
        gd = gd * mask
        retries = 0
        sd = adam_d.step(gd) if pr.optimizer == "adam" else None
        sc = adam_c.step(gc) if pr.optimizer == "adam" else None
        while True:
            if pr.optimizer == "adam":
                d_new = project_design(d + clamp_norm(sd, rd), blocks)
                c_new = c + clamp_norm(sc, rc)
            else:
                d_new, c_new = project_update(d, c, gd, gc, rd, rc, blocks, pr.lr_d, pr.lr_c)
            try:
                value_new, gd_new, gc_new = pr.evaluate(d_new, c_new)
                break
            except ROLLOUT_ERRORS as exc:
                retries += 1
                log.warning("iteration %d rejected (%s); halving trust radii", k, exc)
                if retries > pr.max_retries:
                    raise CodesignError(f"rollout failed {retries} times in a row: {exc}", k) from exc
                rd *= 0.5
                rc *= 0.5
        d, c = d_new, c_new
        value, gd, gc = value_new, gd_new, gc_new
    return hist


__all__ = ["Adam", "CodesignError", "CodesignProblem", "ComTargetLoss", "ConstantPolicy", "CubicPolicy",
           "History", "JointTargetLoss", "PointTargetLoss", "Policy", "RelativeComLoss", "SinePolicy",
           "clamp_norm", "codesign_optimize", "make_loss", "make_policy", "policy_eval", "project_design",
           "project_simplex", "project_update"]

"""Recursive forward kinematics and its analytic derivatives.

Link ``i`` has world transform ``T_i = T_parent @ A_i(d) @ L_i(theta_i)``
where ``A_i`` is the fixed-rotation attachment transform (its translation
is a convex combination of vertices of a hull on the parent link) and
``L_i`` is the joint motion.

Derivatives are carried as jets over a combined variable vector
``z = [theta, d]``: the value ``V`` (4x4), first derivatives ``D``
(n x 4 x 4) and second derivatives ``S`` (r x n x 4 x 4) restricted to the
first ``r`` variables (the joint coordinates).  Design-design second
derivatives are never needed and are not formed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

JOINT_DOFS = {"revolute": 1, "prismatic": 1, "ball": 3, "free6": 6, "fixed": 0}

_SERIES_TERMS = 16
_A_COEF = np.array([(-1.0) ** k / math.factorial(2 * k + 1) for k in range(_SERIES_TERMS)])
_B_COEF = np.array([(-1.0) ** k / math.factorial(2 * k + 2) for k in range(_SERIES_TERMS)])


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


_E = np.array([skew(e) for e in np.eye(3)])


def _series(coef, y):
    k = np.arange(len(coef))
    p = y ** k
    f = float(coef @ p)
    d1 = float((coef[1:] * k[1:]) @ p[:-1])
    d2 = float((coef[2:] * k[2:] * (k[2:] - 1)) @ p[:-2])
    return f, d1, d2


def _rot_coeffs(y: float):
    """``a = sin t / t`` and ``b = (1 - cos t) / t^2`` with ``t^2 = y``, plus
    their first and second derivatives in ``y``."""
    if y < 1.0:
        return _series(_A_COEF, y), _series(_B_COEF, y)
    t = math.sqrt(y)
    s, c = math.sin(t), math.cos(t)
    a = (s / t, (t * c - s) / (2 * t**3), (-t * t * s - 3 * t * c + 3 * s) / (4 * t**5))
    b = ((1 - c) / y, (t * s / 2 + c - 1) / t**4, (t * t * c - 5 * t * s - 8 * c + 8) / (4 * t**6))
    return a, b


def exp_so3(x, order: int = 0):
    """Rotation ``exp([x])`` with optional first/second derivatives.

    Returns ``R`` and, for ``order >= 1``, ``dR`` of shape (3, 3, 3) with
    ``dR[k] = dR/dx_k``; for ``order >= 2`` also ``ddR`` (3, 3, 3, 3).
    """
    x = np.asarray(x, dtype=float)
    y = float(x @ x)
    (a, a1, a2), (b, b1, b2) = _rot_coeffs(y)
    K = skew(x)
    K2 = K @ K
    R = np.eye(3) + a * K + b * K2
    if order == 0:
        return R
    EK = np.einsum("kij,jl->kil", _E, K) + np.einsum("ij,kjl->kil", K, _E)
    dR = (2 * a1 * x[:, None, None] * K + a * _E + 2 * b1 * x[:, None, None] * K2 + b * EK)
    if order == 1:
        return R, dR
    xx = np.outer(x, x)[:, :, None, None]
    eye = np.eye(3)[:, :, None, None]
    xk = x[:, None, None, None]
    xl = x[None, :, None, None]
    ddR = (4 * a2 * xx * K + 2 * a1 * eye * K
           + 2 * a1 * (xk * _E[None] + xl * _E[:, None])
           + 4 * b2 * xx * K2 + 2 * b1 * eye * K2
           + 2 * b1 * (xk * EK[None] + xl * EK[:, None])
           + b * (np.einsum("kij,ljm->klim", _E, _E) + np.einsum("lij,kjm->klim", _E, _E)))
    return R, dR, ddR


@dataclass
class Joint:
    """Joint connecting a link to ``parent`` (-1 for the world).

    ``origin`` is used when the joint is not attached to a parent hull.
    ``attach_hull`` and ``attach_weights`` place the joint at a convex
    combination of that parent hull's vertices.  ``actuated`` defaults to
    True for every kind except ``free6``.
    """

    kind: str = "fixed"
    parent: int = -1
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    attach_hull: int | None = None
    attach_weights: np.ndarray | None = None
    actuated: bool | None = None

    def __post_init__(self):
        if self.kind not in JOINT_DOFS:
            raise ValueError(f"unknown joint kind {self.kind!r}")
        self.axis = np.asarray(self.axis, dtype=float)
        nrm = np.linalg.norm(self.axis)
        if self.kind in ("revolute", "prismatic"):
            if not nrm > 0:
                raise ValueError("joint axis must be nonzero")
            self.axis = self.axis / nrm
        self.origin = np.asarray(self.origin, dtype=float)
        self.rotation = np.asarray(self.rotation, dtype=float)
        if self.attach_weights is not None:
            self.attach_weights = np.asarray(self.attach_weights, dtype=float)

    @property
    def ndof(self) -> int:
        return JOINT_DOFS[self.kind]

    @property
    def is_actuated(self) -> bool:
        return self.kind != "free6" if self.actuated is None else bool(self.actuated)

    def local_jet(self, q, order: int):
        """Value, derivatives and second derivatives of ``L(q)`` in its own dofs."""
        k = self.ndof
        V = np.eye(4)
        D = np.zeros((k, 4, 4))
        S = np.zeros((k, k, 4, 4))
        if self.kind == "revolute":
            R, dR, ddR = exp_so3(self.axis * q[0], 2)
            V[:3, :3] = R
            D[0, :3, :3] = np.einsum("k,kij->ij", self.axis, dR)
            S[0, 0, :3, :3] = np.einsum("k,l,klij->ij", self.axis, self.axis, ddR)
        elif self.kind == "prismatic":
            V[:3, 3] = self.axis * q[0]
            D[0, :3, 3] = self.axis
        elif self.kind == "ball":
            R, dR, ddR = exp_so3(q, 2)
            V[:3, :3] = R
            D[:, :3, :3] = dR
            S[:, :, :3, :3] = ddR
        elif self.kind == "free6":
            R, dR, ddR = exp_so3(q[3:6], 2)
            V[:3, :3] = R
            V[:3, 3] = q[:3]
            for c in range(3):
                D[c, c, 3] = 1.0
            D[3:, :3, :3] = dR
            S[3:, 3:, :3, :3] = ddR
        return V, D, S


@dataclass
class Link:
    """A rigid link: a union of convex hulls given as slot-index lists."""

    hulls: list
    joint: Joint = field(default_factory=Joint)
    density: float | None = None
    design: bool = False
    name: str = ""

    @property
    def vertex_instances(self) -> int:
        return sum(len(h) for h in self.hulls)

    @property
    def mass_density(self) -> float:
        """Per-vertex lumped mass; defaults to unit link mass."""
        if self.density is not None:
            return float(self.density)
        return 1.0 / max(self.vertex_instances, 1)


@dataclass
class Robot:
    """Design of an articulated robot.

    ``slots`` stores every vertex coordinate once.  Hulls reference slots
    by index, so two hulls listing the same slot share that vertex.
    Vertices are expressed in the owning link's frame.
    """

    slots: np.ndarray
    links: list
    strict: bool = True

    def __post_init__(self):
        self.slots = np.atleast_2d(np.asarray(self.slots, dtype=float))
        owner = {}
        for i, link in enumerate(self.links):
            p = link.joint.parent
            if not -1 <= p < i:
                raise ValueError(f"links[{i}].joint.parent={p} must precede the link")
            for h in link.hulls:
                if len(h) == 0:
                    raise ValueError(f"links[{i}] has an empty hull")
                for s in h:
                    if not 0 <= s < len(self.slots):
                        raise ValueError(f"links[{i}] references vertex slot {s} out of range")
                    if owner.setdefault(s, i) != i:
                        raise ValueError(f"vertex slot {s} is shared by links {owner[s]} and {i}")
            j = link.joint
            if j.attach_hull is not None:
                if p < 0:
                    raise ValueError(f"links[{i}].joint attaches to a hull but has no parent")
                parent_hulls = self.links[p].hulls
                if not 0 <= j.attach_hull < len(parent_hulls):
                    raise ValueError(f"links[{i}].joint.attach.hull out of range")
                w = j.attach_weights
                if w is None or w.shape != (len(parent_hulls[j.attach_hull]),):
                    raise ValueError(f"links[{i}].joint.attach.weights must match the hull vertex count")
                if self.strict and (np.any(w < -1e-12) or abs(w.sum() - 1.0) > 1e-9):
                    raise ValueError(f"links[{i}].joint.attach.weights must lie on the simplex")
        self._layout()

    def _layout(self):
        offs = []
        n = 0
        for link in self.links:
            offs.append(n)
            n += link.joint.ndof
        self.dof_offsets = offs
        self.ndof = n
        free = sorted({s for link in self.links if link.design for h in link.hulls for s in h})
        self.free_slots = free
        self.slot_column = {s: 3 * k for k, s in enumerate(free)}
        woffs = {}
        m = 3 * len(free)
        for i, link in enumerate(self.links):
            j = link.joint
            if link.design and j.attach_hull is not None:
                woffs[i] = m
                m += len(j.attach_weights)
        self.weight_offsets = woffs
        self.ndesign = m

    def link_slots(self, i: int) -> list:
        return sorted({s for h in self.links[i].hulls for s in h})

    def design_vector(self) -> np.ndarray:
        d = np.zeros(self.ndesign)
        for s, c in self.slot_column.items():
            d[c:c + 3] = self.slots[s]
        for i, off in self.weight_offsets.items():
            w = self.links[i].joint.attach_weights
            d[off:off + len(w)] = w
        return d

    def with_design(self, d, strict: bool = True) -> "Robot":
        """Copy of the robot with design variables replaced by ``d``.

        ``strict=False`` skips the simplex check on attachment weights, which
        finite-difference probes need.
        """
        d = np.asarray(d, dtype=float)
        if d.shape != (self.ndesign,):
            raise ValueError(f"design vector must have length {self.ndesign}")
        slots = self.slots.copy()
        for s, c in self.slot_column.items():
            slots[s] = d[c:c + 3]
        links = []
        for i, link in enumerate(self.links):
            if i in self.weight_offsets:
                off = self.weight_offsets[i]
                n = len(link.joint.attach_weights)
                joint = replace(link.joint, attach_weights=d[off:off + n].copy())
                link = replace(link, joint=joint)
            links.append(link)
        return Robot(slots, links, strict)

    def weight_blocks(self):
        """``(offset, length)`` of every attachment-weight block in ``d``."""
        return [(off, len(self.links[i].joint.attach_weights)) for i, off in sorted(self.weight_offsets.items())]

    def static_links(self) -> list:
        """Links whose transform does not depend on any joint coordinate."""
        out = []
        for i, link in enumerate(self.links):
            p = link.joint.parent
            moving = link.joint.ndof > 0 or (p >= 0 and not out[p])
            out.append(not moving)
        return out


@dataclass
class KinState:
    """Per-link jets at one configuration."""

    V: list
    D: list | None
    S: list | None
    n: int
    r: int
    wrt_design: bool


class Kinematics:
    """Forward kinematics of a :class:`Robot` with analytic derivatives."""

    def __init__(self, robot: Robot):
        self.robot = robot

    @property
    def ndof(self) -> int:
        return self.robot.ndof

    def _attach(self, i: int, n: int, wrt_design: bool):
        robot = self.robot
        j = robot.links[i].joint
        V = np.eye(4)
        V[:3, :3] = j.rotation
        D = np.zeros((n, 4, 4))
        if j.attach_hull is None:
            V[:3, 3] = j.origin
            return V, D
        hull = robot.links[j.parent].hulls[j.attach_hull]
        pts = robot.slots[hull]
        V[:3, 3] = j.attach_weights @ pts
        if wrt_design:
            base = robot.ndof
            for w, s in zip(j.attach_weights, hull):
                col = robot.slot_column.get(s)
                if col is not None:
                    for c in range(3):
                        D[base + col + c, c, 3] += w
            off = robot.weight_offsets.get(i)
            if off is not None:
                for k, s in enumerate(hull):
                    D[base + off + k, :3, 3] = robot.slots[s]
        return V, D

    def transforms(self, theta) -> list:
        theta = np.asarray(theta, dtype=float)
        out = []
        for i, link in enumerate(self.robot.links):
            A, _ = self._attach(i, 0, False)
            off = self.robot.dof_offsets[i]
            L, _, _ = link.joint.local_jet(theta[off:off + link.joint.ndof], 0)
            T = A @ L
            p = link.joint.parent
            out.append(T if p < 0 else out[p] @ T)
        return out

    def jets(self, theta, order: int = 1, wrt_design: bool = False) -> KinState:
        """Jets of every link transform.

        Parameters
        ----------
        theta : array_like
            Joint coordinates, length ``ndof``.
        order : int
            0, 1 or 2.
        wrt_design : bool
            Differentiate also with respect to the design vector.
        """
        theta = np.asarray(theta, dtype=float)
        robot = self.robot
        r = robot.ndof
        n = r + (robot.ndesign if wrt_design else 0)
        Vs, Ds, Ss = [], [], []
        for i, link in enumerate(robot.links):
            joint = link.joint
            off = robot.dof_offsets[i]
            k = joint.ndof
            A, DA = self._attach(i, n, wrt_design)
            L, dL, ddL = joint.local_jet(theta[off:off + k], order)
            V = A @ L
            D = None
            S = None
            if order >= 1:
                D = DA @ L
                if k:
                    D[off:off + k] += np.einsum("ij,kjl->kil", A, dL)
            if order >= 2:
                S = np.zeros((r, n, 4, 4))
                if k:
                    S[off:off + k, off:off + k] = np.einsum("ij,abjl->abil", A, ddL)
                    # attachment depends on design only, the joint on its own dofs
                    cross = np.einsum("bij,ajl->abil", DA, dL)
                    S[off:off + k, :] += cross
            p = joint.parent
            if p >= 0:
                Vp = Vs[p]
                if order >= 2:
                    Dp, Sp = Ds[p], Ss[p]
                    S = (np.einsum("abij,jk->abik", Sp, V)
                         + np.einsum("aij,bjk->abik", Dp[:r], D)
                         + np.einsum("bij,ajk->abik", Dp, D[:r])
                         + np.einsum("ij,abjk->abik", Vp, S))
                if order >= 1:
                    D = np.einsum("bij,jk->bik", Ds[p], V) + np.einsum("ij,bjk->bik", Vp, D)
                V = Vp @ V
            Vs.append(V)
            Ds.append(D)
            Ss.append(S)
        return KinState(Vs, Ds if order >= 1 else None, Ss if order >= 2 else None, n, r, wrt_design)

    # ------------------------------------------------------------------ points

    def world_points(self, state: KinState, i: int, slots) -> np.ndarray:
        V = state.V[i]
        return self.robot.slots[slots] @ V[:3, :3].T + V[:3, 3]

    def point_jacobian(self, state: KinState, i: int, slots) -> np.ndarray:
        """``d x / d z`` for world points of link ``i``, shape (M, 3, n)."""
        xh = self.robot.slots[slots]
        D = state.D[i]
        J = np.einsum("bij,mj->mib", D[:, :3, :3], xh) + D[:, :3, 3].T[None]
        if state.wrt_design:
            R = state.V[i][:3, :3]
            base = self.robot.ndof
            for m, s in enumerate(slots):
                col = self.robot.slot_column.get(s)
                if col is not None:
                    J[m, :, base + col:base + col + 3] += R
        return J

    def second_contraction(self, state: KinState, i: int, slots, g) -> np.ndarray:
        """``sum_m g_m . d^2 x_m / (d theta_a d z_b)``, shape (r, n)."""
        xh = self.robot.slots[slots]
        g = np.asarray(g, dtype=float)
        G = np.zeros((3, 4))
        G[:, :3] = g.T @ xh
        G[:, 3] = g.sum(axis=0)
        out = np.einsum("abij,ij->ab", state.S[i][:, :, :3, :], G)
        if state.wrt_design:
            D = state.D[i]
            base = self.robot.ndof
            for m, s in enumerate(slots):
                col = self.robot.slot_column.get(s)
                if col is not None:
                    # d/d theta_a of (R x_hat) along x_hat columns
                    out[:, base + col:base + col + 3] += np.einsum("aij,i->aj", D[:state.r, :3, :3], g[m])
        return out


def forward_transforms(robot: Robot, theta) -> list:
    return Kinematics(robot).transforms(theta)


def world_vertex(robot: Robot, theta, i: int, slot: int) -> np.ndarray:
    T = forward_transforms(robot, theta)[i]
    return T[:3, :3] @ robot.slots[slot] + T[:3, 3]


def stacked_jacobian(kin: Kinematics, state: KinState, blocks) -> np.ndarray:
    """Jacobian of stacked world points, shape (3 * M_total, n).

    ``blocks`` is a sequence of ``(link, slots)`` in stacking order.
    """
    return np.concatenate([kin.point_jacobian(state, i, s).reshape(-1, state.n) for i, s in blocks])


def pullback(kin: Kinematics, state: KinState, blocks, grad, hess=None, jac=None):
    """Chain a point-space gradient (and Hessian) to the variables ``z``.

    Parameters
    ----------
    grad : ndarray, shape (M_total, 3)
    hess : ndarray, shape (3 M_total, 3 M_total), optional

    Returns
    -------
    g_z : ndarray, shape (n,)
    H_z : ndarray, shape (r, n) or None
        Rows are joint coordinates, columns all of ``z``.
    """
    grad = np.asarray(grad, dtype=float).reshape(-1, 3)
    J = stacked_jacobian(kin, state, blocks) if jac is None else jac
    g_z = grad.reshape(-1) @ J
    if hess is None:
        return g_z, None
    r = state.r
    H_z = J[:, :r].T @ hess @ J
    row = 0
    for i, s in blocks:
        H_z += kin.second_contraction(state, i, s, grad[row:row + len(s)])
        row += len(s)
    return g_z, H_z

"""Scene files (JSON) and trajectory/history files (CSV with a JSON header).

Units are SI throughout: metres, seconds, kilograms, radians.  A scene
lists every vertex once in ``vertices``; hulls refer to vertices by index,
so two hulls of one link that list the same index share that vertex.

Minimal scene::

    {"vertices": [[0, 0, 0]],
     "links": [{"hulls": [[0]], "joint": {"kind": "free6"}}]}
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .barrier import BarrierParams
from .codesign import CodesignProblem, make_loss, make_policy
from .dynamics import NewtonParams, Simulator, StepParams
from .kinematics import JOINT_DOFS, Joint, Link, Robot


class SceneError(ValueError):
    """Schema violation; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class ScenePenetrationError(ValueError):
    """The initial configuration has intersecting hulls."""

    def __init__(self, pairs):
        self.pairs = pairs
        desc = ", ".join(f"link {a[0]} hull {a[1]} / link {b[0]} hull {b[1]}" for a, b in pairs)
        super().__init__(f"initial state penetrates: {desc}")


NEWTON_KEYS = ("grad_tol", "eig_floor", "max_iters", "ls_shrink", "ls_c", "min_step", "inner_tol")


# ---------------------------------------------------------------- field readers

def _get(obj: dict, key: str, path: str, default=None, required: bool = False):
    if not isinstance(obj, dict):
        raise SceneError(path, "expected an object")
    if key not in obj:
        if required:
            raise SceneError(f"{path}.{key}" if path else key, "missing required field")
        return default
    return obj[key]


def _float(v, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SceneError(path, f"expected a number, got {v!r}")
    return float(v)


def _int(v, path: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise SceneError(path, f"expected an integer, got {v!r}")
    return v


def _vec(v, path: str, n: int | None = None) -> np.ndarray:
    if not isinstance(v, list):
        raise SceneError(path, "expected a list of numbers")
    out = np.array([_float(x, f"{path}[{k}]") for k, x in enumerate(v)], dtype=float)
    if n is not None and len(out) != n:
        raise SceneError(path, f"expected {n} entries, got {len(out)}")
    return out


def _mat(v, path: str, cols: int) -> np.ndarray:
    if not isinstance(v, list):
        raise SceneError(path, "expected a list of rows")
    rows = [_vec(r, f"{path}[{k}]", cols) for k, r in enumerate(v)]
    return np.array(rows, dtype=float).reshape(len(rows), cols)


# ---------------------------------------------------------------- scene

@dataclass
class Scene:
    """A robot with step parameters, initial state and optional co-design set-up."""

    robot: Robot
    params: StepParams
    theta0: np.ndarray
    theta_dot0: np.ndarray
    policy: dict | None = None
    loss: dict | None = None
    codesign: dict | None = None
    name: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def theta_prev(self) -> np.ndarray:
        return self.theta0 - self.params.dt * self.theta_dot0

    def simulator(self, design=None) -> Simulator:
        robot = self.robot if design is None else self.robot.with_design(design)
        return Simulator(robot, self.params)

    def make_policy(self):
        """``(policy, params)`` or ``(None, None)``."""
        if self.policy is None:
            return None, None
        p = self.policy
        kw = {}
        if p["kind"] == "cubic":
            kw["duration"] = p.get("duration", self.horizon * self.params.dt)
        pol = make_policy(p["kind"], self.robot.ndof, self.params.dt, **kw)
        c = np.asarray(p["params"], dtype=float)
        if len(c) != pol.nparams:
            raise SceneError("policy.params", f"expected {pol.nparams} entries, got {len(c)}")
        return pol, c

    def make_loss(self):
        return None if self.loss is None else make_loss(self.loss)

    @property
    def horizon(self) -> int:
        return int((self.codesign or {}).get("horizon", 1))

    def design_mask(self) -> np.ndarray:
        """Boolean mask over ``d`` from ``codesign.design`` (all, weights, vertices, none)."""
        which = (self.codesign or {}).get("design", "all")
        nd = self.robot.ndesign
        mask = np.zeros(nd, dtype=bool)
        if which in ("all", "vertices"):
            mask[:3 * len(self.robot.free_slots)] = True
        if which in ("all", "weights"):
            for off, n in self.robot.weight_blocks():
                mask[off:off + n] = True
        return mask

    def problem(self, design: str | None = None) -> CodesignProblem:
        """Co-design problem; ``design`` overrides ``codesign.design``."""
        cfg = dict(self.codesign or {})
        if design is not None:
            cfg["design"] = design
        pol, c = self.make_policy()
        loss = self.make_loss()
        if loss is None:
            raise SceneError("loss", "co-design needs a loss block")
        mask = Scene(self.robot, self.params, self.theta0, self.theta_dot0, codesign=cfg).design_mask()
        return CodesignProblem(
            self.robot, self.params, self.theta0, self.theta_prev, pol,
            np.zeros(0) if c is None else c, loss, int(cfg.get("horizon", 1)),
            float(cfg.get("radius_d", 0.01)), float(cfg.get("radius_c", 0.01)),
            cfg.get("optimizer", "adam"), tuple(cfg.get("betas", (0.9, 0.999))),
            cfg.get("lr_d"), cfg.get("lr_c"), mask, int(cfg.get("seed", 0)))

    # ------------------------------------------------------------ (de)serialisation

    def to_dict(self) -> dict:
        links = []
        for link in self.robot.links:
            j = link.joint
            jd = {"kind": j.kind, "parent": j.parent, "axis": j.axis.tolist(), "origin": j.origin.tolist(),
                  "rotation": j.rotation.tolist()}
            if j.attach_hull is not None:
                jd["attach"] = {"hull": j.attach_hull, "weights": j.attach_weights.tolist()}
            if j.actuated is not None:
                jd["actuated"] = bool(j.actuated)
            ld = {"name": link.name, "hulls": [list(map(int, h)) for h in link.hulls], "joint": jd,
                  "design": bool(link.design)}
            if link.density is not None:
                ld["density"] = link.density
            links.append(ld)
        p = self.params
        params = {"dt": p.dt, "gravity": p.gravity.tolist(), "s": p.barrier.s, "eps": p.barrier.eps,
                  "mu": p.mu, "kappa": p.contact_weight, "kp": p.kp, "kd": p.kd, "rho": p.rho,
                  "skip_adjacent": p.skip_adjacent,
                  "newton": {k: getattr(p.newton, k) for k in NEWTON_KEYS}}
        out = {"name": self.name, "vertices": self.robot.slots.tolist(), "links": links, "params": params,
               "initial": {"theta": self.theta0.tolist(), "theta_dot": self.theta_dot0.tolist()}}
        for key in ("policy", "loss", "codesign"):
            val = getattr(self, key)
            if val is not None:
                out[key] = val
        out.update(self.extra)
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps() + "\n")

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def _joint(jd, path: str, nlinks: int) -> Joint:
    kind = _get(jd, "kind", path, required=True)
    if kind not in JOINT_DOFS:
        raise SceneError(f"{path}.kind", f"unknown joint kind {kind!r}")
    parent = _int(_get(jd, "parent", path, -1), f"{path}.parent")
    if not -1 <= parent < nlinks:
        raise SceneError(f"{path}.parent", f"index {parent} out of range")
    kw = {"kind": kind, "parent": parent}
    if "axis" in jd:
        kw["axis"] = _vec(jd["axis"], f"{path}.axis", 3)
        if kind in ("revolute", "prismatic") and not np.linalg.norm(kw["axis"]) > 0:
            raise SceneError(f"{path}.axis", "axis must be nonzero")
    if "origin" in jd:
        kw["origin"] = _vec(jd["origin"], f"{path}.origin", 3)
    if "rotation" in jd:
        R = _mat(jd["rotation"], f"{path}.rotation", 3)
        if R.shape != (3, 3):
            raise SceneError(f"{path}.rotation", "expected a 3x3 matrix")
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-9 or np.linalg.det(R) < 0:
            raise SceneError(f"{path}.rotation", "not a rotation matrix")
        kw["rotation"] = R
    attach = jd.get("attach")
    if attach is not None:
        kw["attach_hull"] = _int(_get(attach, "hull", f"{path}.attach", required=True), f"{path}.attach.hull")
        kw["attach_weights"] = _vec(_get(attach, "weights", f"{path}.attach", required=True),
                                    f"{path}.attach.weights")
    if jd.get("actuated") is not None:
        if not isinstance(jd["actuated"], bool):
            raise SceneError(f"{path}.actuated", "expected true or false")
        kw["actuated"] = jd["actuated"]
    unknown = set(jd) - {"kind", "parent", "axis", "origin", "rotation", "attach", "actuated"}
    if unknown:
        raise SceneError(f"{path}.{sorted(unknown)[0]}", "unknown field")
    return Joint(**kw)


def _params(pd: dict | None) -> StepParams:
    pd = {} if pd is None else pd
    if not isinstance(pd, dict):
        raise SceneError("params", "expected an object")
    known = {"dt", "gravity", "s", "eps", "mu", "kappa", "kp", "kd", "rho", "skip_adjacent", "newton"}
    unknown = set(pd) - known
    if unknown:
        raise SceneError(f"params.{sorted(unknown)[0]}", "unknown field")
    defaults = StepParams()
    nd = pd.get("newton") or {}
    if not isinstance(nd, dict):
        raise SceneError("params.newton", "expected an object")
    bad = set(nd) - set(NEWTON_KEYS)
    if bad:
        raise SceneError(f"params.newton.{sorted(bad)[0]}", "unknown field")
    nkw = {}
    for k in NEWTON_KEYS:
        if k in nd:
            nkw[k] = _int(nd[k], f"params.newton.{k}") if k == "max_iters" else _float(nd[k], f"params.newton.{k}")
    s = _float(pd.get("s", defaults.barrier.s), "params.s")
    eps = _float(pd.get("eps", defaults.barrier.eps), "params.eps")
    if not 0.0 < s < 1.0:
        raise SceneError("params.s", "must lie in (0, 1)")
    if not eps > 0.0:
        raise SceneError("params.eps", "must be positive")
    for k, v in nkw.items():
        if k not in ("ls_c",) and not v > 0:
            raise SceneError(f"params.newton.{k}", "must be positive")
    kw = {}
    for key, attr in (("dt", "dt"), ("mu", "mu"), ("kappa", "contact_weight"), ("kp", "kp"), ("kd", "kd")):
        if key in pd:
            kw[attr] = _float(pd[key], f"params.{key}")
    for key, attr, strict in (("dt", "dt", True), ("kappa", "contact_weight", True), ("mu", "mu", False),
                              ("kp", "kp", False), ("kd", "kd", False)):
        v = kw.get(attr)
        if v is not None and (v < 0 or (strict and v == 0)):
            raise SceneError(f"params.{key}", "must be positive" if strict else "must be nonnegative")
    if pd.get("rho") is not None:
        kw["rho"] = _float(pd["rho"], "params.rho")
        if not kw["rho"] > 0:
            raise SceneError("params.rho", "must be positive")
    if "gravity" in pd:
        kw["gravity"] = _vec(pd["gravity"], "params.gravity", 3)
    if "skip_adjacent" in pd:
        if not isinstance(pd["skip_adjacent"], bool):
            raise SceneError("params.skip_adjacent", "expected true or false")
        kw["skip_adjacent"] = pd["skip_adjacent"]
    return StepParams(barrier=BarrierParams(s, eps), newton=NewtonParams(**nkw), **kw)


def scene_from_dict(data: dict, check_penetration: bool = True) -> Scene:
    """Build and validate a scene.

    Raises
    ------
    SceneError
        On any schema violation, naming the offending field.
    ScenePenetrationError
        If ``check_penetration`` and the initial state has intersecting hulls.
    """
    if not isinstance(data, dict):
        raise SceneError("<root>", "expected a JSON object")
    known = {"name", "vertices", "links", "params", "initial", "policy", "loss", "codesign"}
    extra = {k: v for k, v in data.items() if k not in known}
    verts = _mat(_get(data, "vertices", "", required=True), "vertices", 3)
    raw_links = _get(data, "links", "", required=True)
    if not isinstance(raw_links, list) or not raw_links:
        raise SceneError("links", "expected a nonempty list")
    links = []
    for i, ld in enumerate(raw_links):
        path = f"links[{i}]"
        hulls = _get(ld, "hulls", path, required=True)
        if not isinstance(hulls, list) or not hulls:
            raise SceneError(f"{path}.hulls", "expected a nonempty list of index lists")
        hl = []
        for k, h in enumerate(hulls):
            if not isinstance(h, list) or not h:
                raise SceneError(f"{path}.hulls[{k}]", "expected a nonempty list of vertex indices")
            idx = [_int(v, f"{path}.hulls[{k}]") for v in h]
            for v in idx:
                if not 0 <= v < len(verts):
                    raise SceneError(f"{path}.hulls[{k}]", f"vertex index {v} out of range")
            hl.append(idx)
        joint = _joint(_get(ld, "joint", path, required=True), f"{path}.joint", len(raw_links))
        if not joint.parent < i:
            raise SceneError(f"{path}.joint.parent", f"index {joint.parent} must precede link {i}")
        if joint.attach_hull is not None:
            if joint.parent < 0:
                raise SceneError(f"{path}.joint.attach", "attachment needs a parent link")
            nh = len(raw_links[joint.parent]["hulls"])
            if not 0 <= joint.attach_hull < nh:
                raise SceneError(f"{path}.joint.attach.hull", f"index {joint.attach_hull} out of range")
            nv = len(raw_links[joint.parent]["hulls"][joint.attach_hull])
            w = joint.attach_weights
            if len(w) != nv:
                raise SceneError(f"{path}.joint.attach.weights", f"expected {nv} entries")
            if np.any(w < -1e-12) or abs(w.sum() - 1.0) > 1e-9:
                raise SceneError(f"{path}.joint.attach.weights", "weights must be nonnegative and sum to 1")
        density = ld.get("density")
        if density is not None:
            density = _float(density, f"{path}.density")
            if not density > 0:
                raise SceneError(f"{path}.density", "must be positive")
        design = ld.get("design", False)
        if not isinstance(design, bool):
            raise SceneError(f"{path}.design", "expected true or false")
        name = ld.get("name", "")
        if not isinstance(name, str):
            raise SceneError(f"{path}.name", "expected a string")
        links.append(Link(hl, joint, density, design, name))
    try:
        robot = Robot(verts, links)
    except ValueError as exc:
        raise SceneError("links", str(exc)) from exc
    params = _params(data.get("params"))
    init = data.get("initial") or {}
    if not isinstance(init, dict):
        raise SceneError("initial", "expected an object")
    theta0 = _vec(init["theta"], "initial.theta", robot.ndof) if "theta" in init else np.zeros(robot.ndof)
    tdot = _vec(init["theta_dot"], "initial.theta_dot", robot.ndof) if "theta_dot" in init else np.zeros(robot.ndof)
    scene = Scene(robot, params, theta0, tdot, data.get("policy"), data.get("loss"), data.get("codesign"),
                  data.get("name", ""), extra)
    _check_blocks(scene)
    if check_penetration:
        sim = scene.simulator()
        bad = sim.check_separated(theta0)
        if bad:
            raise ScenePenetrationError(bad)
    return scene


def _check_blocks(scene: Scene) -> None:
    if scene.policy is not None:
        p = scene.policy
        if not isinstance(p, dict) or p.get("kind") not in ("sine", "cubic", "constant"):
            raise SceneError("policy.kind", "expected one of sine, cubic, constant")
        if "params" not in p:
            raise SceneError("policy.params", "missing required field")
        _vec(p["params"], "policy.params")
        scene.make_policy()
    if scene.loss is not None:
        try:
            loss = scene.make_loss()
        except (KeyError, TypeError, ValueError) as exc:
            raise SceneError("loss", f"invalid loss block ({exc})") from exc
        nl = len(scene.robot.links)
        for attr in ("link",):
            if hasattr(loss, attr) and not 0 <= getattr(loss, attr) < nl:
                raise SceneError(f"loss.{attr}", "index out of range")
        if hasattr(loss, "slot") and loss.slot not in scene.robot.link_slots(loss.link):
            raise SceneError("loss.slot", f"vertex {loss.slot} does not belong to link {loss.link}")
    if scene.codesign is not None:
        cfg = scene.codesign
        if not isinstance(cfg, dict):
            raise SceneError("codesign", "expected an object")
        h = cfg.get("horizon", 1)
        if _int(h, "codesign.horizon") < 1:
            raise SceneError("codesign.horizon", "must be at least 1")
        for key in ("radius_d", "radius_c"):
            if key in cfg and _float(cfg[key], f"codesign.{key}") < 0:
                raise SceneError(f"codesign.{key}", "must be nonnegative")
        if cfg.get("optimizer", "adam") not in ("adam", "projected_gradient"):
            raise SceneError("codesign.optimizer", "expected adam or projected_gradient")
        if cfg.get("design", "all") not in ("all", "weights", "vertices", "none"):
            raise SceneError("codesign.design", "expected all, weights, vertices or none")


def loads_scene(text: str, check_penetration: bool = True) -> Scene:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneError("<root>", f"invalid JSON ({exc})") from exc
    return scene_from_dict(data, check_penetration)


def load_scene(path, check_penetration: bool = True) -> Scene:
    return loads_scene(Path(path).read_text(), check_penetration)


# ---------------------------------------------------------------- csv outputs

def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path, header: dict, columns: list, rows) -> None:
    """CSV with a ``# {json}`` first line; floats use shortest round-trip form."""
    buf = io.StringIO()
    buf.write("# " + json.dumps(header, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    Path(path).write_text(buf.getvalue())


def read_csv(path):
    """``(header, columns, rows)`` with rows as float arrays."""
    lines = Path(path).read_text().splitlines()
    header = json.loads(lines[0][2:])
    reader = csv.reader(lines[1:])
    columns = next(reader)
    rows = [np.array([float(v) for v in r]) for r in reader]
    return header, columns, rows


def save_trajectory(scene: Scene, results, path) -> None:
    """Write one row per completed step: ``t, theta..., objective, iterations, active_pairs, min_distance``."""
    n = scene.robot.ndof
    p = scene.params
    header = {"scene": scene.digest(), "name": scene.name, "ndof": n,
              "params": {"dt": p.dt, "s": p.barrier.s, "eps": p.barrier.eps, "mu": p.mu, "kappa": p.contact_weight,
                         "kp": p.kp, "kd": p.kd}}
    cols = ["t"] + [f"theta_{k}" for k in range(n)] + ["objective", "iterations", "active_pairs", "min_distance"]
    rows = [[t + 1, *r.theta, r.value, r.iterations, r.active_pairs, r.min_distance] for t, r in enumerate(results)]
    write_csv(path, header, cols, rows)


__all__ = ["Scene", "SceneError", "ScenePenetrationError", "load_scene", "loads_scene", "read_csv",
           "save_trajectory", "scene_from_dict", "write_csv"]

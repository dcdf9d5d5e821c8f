"""Command-line interface: ``simulate``, ``gradcheck``, ``codesign`` and ``bench``.

Exit codes: 0 success, 1 derivative check above threshold, 2 usage error,
3 scene schema error, 4 penetrating initial state, 5 solver failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time

import numpy as np

from . import kernels
from .adjoint import SensitivityFailure
from .barrier import BarrierParams
from .codesign import CodesignError, codesign_optimize
from .contact import ContactSolverError, PenetrationError, solve_contact
from .dynamics import Simulator, StepFailure, StepParams
from .geometry import gjk_distance
from .gradcheck import THRESHOLDS, check_contact, check_friction, check_step, check_trajectory
from .kinematics import Joint, Link, Robot
from .scene import SceneError, ScenePenetrationError, load_scene, save_trajectory, write_csv

EXIT_OK = 0
EXIT_CHECK = 1
EXIT_SCHEMA = 3
EXIT_PENETRATION = 4
EXIT_SOLVER = 5

SOLVER_ERRORS = (StepFailure, SensitivityFailure, ContactSolverError, PenetrationError, CodesignError)


def cmd_simulate(args) -> int:
    scene = load_scene(args.scene)
    sim = scene.simulator()
    pol, c = scene.make_policy()
    theta, prev = scene.theta0.copy(), scene.theta_prev.copy()
    results = []
    t0 = time.perf_counter()
    code = EXIT_OK
    try:
        for t in range(args.steps):
            ctrl = pol.control(c, theta, prev, t) if pol is not None else None
            res = sim.step(theta, prev, ctrl, step_index=t)
            if not res.min_distance > 0.0:
                raise StepFailure(f"pair distance {res.min_distance:.3e} is not positive", t)
            results.append(res)
            prev, theta = theta, res.theta
    except SOLVER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_SOLVER
    save_trajectory(scene, results, args.out)
    wall = time.perf_counter() - t0
    if results:
        dmin = min(r.min_distance for r in results)
        iters = sum(r.iterations for r in results)
        print(f"steps={len(results)} newton_iterations={iters} min_distance={dmin:.6g} wall={wall:.3f}s "
              f"backend={kernels.BACKEND}")
    return code


def cmd_gradcheck(args) -> int:
    scene = load_scene(args.scene)
    sim = scene.simulator()
    rng = np.random.default_rng(args.seed)
    target = args.target
    pol, c = scene.make_policy()
    if target == "contact":
        report = check_contact(sim, scene.theta0)
    elif target == "friction":
        report = check_friction(sim, scene.theta0, rng)
    elif target == "step":
        ctrl = pol.control(c, scene.theta0, scene.theta_prev, 0) if pol is not None else None
        report = check_step(sim, scene.theta0, scene.theta_prev, ctrl)
    else:
        loss = scene.make_loss()
        if loss is None:
            raise SceneError("loss", "trajectory check needs a loss block")
        horizon = args.horizon if args.horizon is not None else scene.horizon
        report = check_trajectory(scene.robot, scene.params, scene.theta0, scene.theta_prev, horizon, loss, pol, c)
    limit = THRESHOLDS[target]
    ok = True
    if not report:
        print(f"{target}: nothing to check (no active pairs or variables)")
    for name in sorted(report):
        err = report[name]
        passed = err <= limit
        ok &= passed
        print(f"{name:24s} max_rel_err={err:.3e} threshold={limit:.0e} {'PASS' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_codesign(args) -> int:
    scene = load_scene(args.scene)
    problem = scene.problem(args.design)
    if args.optimizer is not None:
        problem.optimizer = args.optimizer
    try:
        hist = codesign_optimize(problem, args.iters)
    except CodesignError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    nd = len(hist.design[0])
    nc = len(hist.params[0])
    header = {"scene": scene.digest(), "iters": args.iters, "optimizer": problem.optimizer,
              "design": args.design or (scene.codesign or {}).get("design", "all"), "horizon": problem.horizon}
    cols = ["iter", "loss", "radius_d", "radius_c"] + [f"d_{k}" for k in range(nd)] + [f"c_{k}" for k in range(nc)]
    rows = [[k, hist.loss[k], hist.radius_d[k], hist.radius_c[k], *hist.design[k], *hist.params[k]]
            for k in range(len(hist.loss))]
    write_csv(args.out, header, cols, rows)
    first, last = hist.loss[0], hist.loss[-1]
    red = 100.0 * (1.0 - last / first) if first > 0 else 0.0
    print(f"iterations={args.iters} initial_loss={first:.6g} final_loss={last:.6g} reduction={red:.2f}%")
    return EXIT_OK


# ---------------------------------------------------------------- bench

def sphere_hull(m: int, radius: float = 0.5) -> np.ndarray:
    """``m`` points spread evenly on a sphere (golden-angle spiral)."""
    k = np.arange(m) + 0.5
    z = 1.0 - 2.0 * k / m
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * k
    return radius * np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def time_contact(m: int, barrier: BarrierParams, repeats: int = 20, backend=None) -> float:
    """Median wall time of one cold-started contact solve for two ``m``-vertex hulls."""
    A = sphere_hull(m)
    B = sphere_hull(m) + np.array([0.0, 0.0, 1.0])
    # place the hulls at half the support distance so the contact is active
    B[:, 2] += 0.5 * barrier.support_distance - gjk_distance(A, B).distance
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        solve_contact(A, B, barrier, backend=backend)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def time_steps(m: int, params: StepParams, steps: int = 5) -> float:
    """Mean wall time per step of an ``m``-vertex hull dropped onto a ground box."""
    ground = np.array([[x, y, z] for x in (-3.0, 3.0) for y in (-3.0, 3.0) for z in (-1.0, 0.0)])
    slots = np.vstack([ground, sphere_hull(m)])
    robot = Robot(slots, [Link([list(range(8))], Joint("fixed")),
                          Link([list(range(8, 8 + m))], Joint("free6"))])
    sim = Simulator(robot, params)
    theta = np.array([0.0, 0.0, 0.5 + 0.8 * params.barrier.support_distance, 0.0, 0.0, 0.0])
    prev = theta.copy()
    t0 = time.perf_counter()
    for t in range(steps):
        res = sim.step(theta, prev, step_index=t)
        prev, theta = theta, res.theta
    return (time.perf_counter() - t0) / steps


def power_law_exponent(sizes, times) -> float:
    return float(np.polyfit(np.log(sizes), np.log(times), 1)[0])


def cmd_bench(args) -> int:
    scene = load_scene(args.scene)
    sizes = [int(v) for v in args.hull_sizes.split(",") if v.strip()]
    if not sizes or min(sizes) < 4:
        raise SceneError("--hull-sizes", "need vertex counts of at least 4")
    params = scene.params
    rows = []
    print(f"{'M':>6s} {'contact_s':>12s} {'step_s':>12s}  backend={kernels.BACKEND}")
    for m in sizes:
        tc = time_contact(m, params.barrier, args.repeats)
        ts = time_steps(m, params, args.steps)
        rows.append([m, tc, ts])
        print(f"{m:6d} {tc:12.6f} {ts:12.6f}")
    exponent = power_law_exponent(sizes, [r[1] for r in rows]) if len(sizes) > 1 else float("nan")
    print(f"contact time power-law exponent: {exponent:.3f}")
    if args.out:
        write_csv(args.out, {"scene": scene.digest(), "backend": kernels.BACKEND, "exponent": exponent},
                  ["M", "contact_seconds", "step_seconds"], rows)
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hullsim", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="roll out a scene and write a trajectory CSV")
    p.add_argument("--scene", required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0, help="accepted for interface symmetry; simulation is deterministic")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gradcheck", help="compare analytic derivatives with finite differences")
    p.add_argument("--scene", required=True)
    p.add_argument("--target", choices=["contact", "friction", "step", "trajectory"], required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", type=int, default=None)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("codesign", help="optimise design and controller, write a loss history CSV")
    p.add_argument("--scene", required=True)
    p.add_argument("--iters", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--design", choices=["all", "weights", "vertices", "none"], default=None)
    p.add_argument("--optimizer", choices=["adam", "projected_gradient"], default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_codesign)

    p = sub.add_parser("bench", help="time contact evaluation and stepping against hull size")
    p.add_argument("--scene", required=True)
    p.add_argument("--hull-sizes", default="8,16,32,64")
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SceneError as exc:
        print(f"scene error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except ScenePenetrationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PENETRATION
    except SOLVER_ERRORS as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA


if __name__ == "__main__":
    sys.exit(main())

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import SCENES, chain2
from hullsim.codesign import (Adam, CodesignError, CodesignProblem, ComTargetLoss, ConstantPolicy, CubicPolicy,
                              JointTargetLoss, PointTargetLoss, RelativeComLoss, SinePolicy, clamp_norm,
                              codesign_optimize, make_loss, make_policy, policy_eval, project_design,
                              project_simplex, project_update)
from hullsim.dynamics import Simulator, StepFailure
from hullsim.scene import load_scene

DT = 0.01


def policy_fd(pol, c, t, h=1e-7):
    cols_p, cols_v = [], []
    for k in range(len(c)):
        e = np.zeros(len(c))
        e[k] = h
        up, um = pol.control(c + e, None, None, t), pol.control(c - e, None, None, t)
        cols_p.append((up.target - um.target) / (2 * h))
        cols_v.append((up.dtarget - um.dtarget) / (2 * h))
    return np.vstack([np.column_stack(cols_p), np.column_stack(cols_v)])


@pytest.mark.parametrize("pol", [ConstantPolicy(2, DT), SinePolicy(2, DT), CubicPolicy(2, DT, 0.5)])
def test_policy_jacobians_match_fd(pol, rng):
    c = rng.normal(size=pol.nparams)
    if isinstance(pol, SinePolicy):
        c = pol.initial([0.1, -0.2], 3.0) + 0.3 * rng.normal(size=pol.nparams)
    for t in (0, 7, 30):
        du_dc, dth, dprev = pol.jacobians(c, None, None, t)
        assert dth is None and dprev is None
        fd = policy_fd(pol, c, t)
        assert np.linalg.norm(du_dc - fd) <= 1e-6 * max(np.linalg.norm(fd), 1.0)


@pytest.mark.parametrize("pol", [SinePolicy(1, DT), CubicPolicy(1, DT, 0.3)])
def test_velocity_target_is_time_derivative(pol, rng):
    c = rng.normal(size=pol.nparams)
    h = 1e-6
    for t in (3, 11):
        tau = (t + 1) * DT
        u = pol.control(c, None, None, t)
        fp = pol._eval(c, tau + h)[0]
        fm = pol._eval(c, tau - h)[0]
        assert u.dtarget == pytest.approx((fp - fm) / (2 * h), rel=1e-6, abs=1e-8)


def test_trivial_policies():
    const = ConstantPolicy(2, DT)
    c = np.array([0.4, -0.1])
    u0, u9 = const.control(c, None, None, 0), const.control(c, None, None, 9)
    assert np.array_equal(u0.target, u9.target) and not u0.dtarget.any()
    sine = SinePolicy(2, DT)
    c = sine.initial([0.3, 0.7], 5.0)
    u = sine.control(c, None, None, 4)
    assert np.allclose(u.target, [0.3, 0.7]) and not u.dtarget.any()
    out = policy_eval(sine, c, np.zeros(2), np.zeros(2), 4)
    assert len(out) == 4 and out[2] is None
    with pytest.raises(ValueError):
        make_policy("spline", 2, DT)
    with pytest.raises(ValueError):
        CubicPolicy(1, DT, 0.0)
    assert make_policy("cubic", 2, DT, duration=1.0).to_dict() == {"kind": "cubic", "duration": 1.0}


def loss_fd(loss, sim, theta, h=1e-7):
    r = sim.ndof
    robot = sim.robot
    d0 = robot.design_vector()

    def L(th, d):
        return loss(Simulator(robot.with_design(d, strict=False), sim.params), th)[0]

    g_th = np.array([(L(theta + e, d0) - L(theta - e, d0)) / (2 * h) for e in np.eye(r) * h])
    g_d = np.array([(L(theta, d0 + e) - L(theta, d0 - e)) / (2 * h) for e in np.eye(len(d0)) * h])
    return g_th, g_d


@pytest.mark.parametrize("loss", [PointTargetLoss(2, 23, [1.0, 0.2, 0.1], 2.0), ComTargetLoss([1, 2], [0.5, 0, 0]),
                                  RelativeComLoss([2], [1], [0.3, 0, 0]), JointTargetLoss([0.1], [1])])
def test_loss_gradients(loss):
    robot, params, theta = chain2()
    sim = Simulator(robot, params)
    _, g_th, g_d = loss(sim, theta)
    fd_th, fd_d = loss_fd(loss, sim, theta)
    assert np.allclose(g_th, fd_th, atol=1e-7)
    assert np.allclose(g_d, fd_d, atol=1e-7)
    again = make_loss(loss.to_dict())
    assert again(sim, theta)[0] == loss(sim, theta)[0]


def qp_simplex(v):
    """Projection by enumerating supports and solving each equality-constrained QP."""
    best = None
    n = len(v)
    for k in range(1, n + 1):
        for supp in itertools.combinations(range(n), k):
            idx = list(supp)
            w = np.zeros(n)
            w[idx] = v[idx] - (v[idx].sum() - 1.0) / k
            if np.all(w >= -1e-15):
                dist = np.sum((w - v) ** 2)
                if best is None or dist < best[0]:
                    best = (dist, w)
    return best[1]


@settings(max_examples=200)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=6))
def test_simplex_projection_matches_exhaustive_qp(v):
    v = np.array(v)
    w = project_simplex(v)
    assert np.all(w >= 0) and abs(w.sum() - 1.0) <= 1e-12
    assert np.allclose(w, qp_simplex(v), atol=1e-10)


def test_project_update_trivial_cases():
    d = np.array([0.1, 0.2, 0.25, 0.25, 0.25, 0.25])
    blocks = [(2, 4)]
    c = np.array([1.0, 2.0])
    d1, c1 = project_update(d, c, np.zeros(6), np.zeros(2), 0.1, 0.1, blocks)
    assert np.array_equal(d1, d) and np.array_equal(c1, c)
    g = np.array([1e9, 0, 0, 0, 0, 0])
    d2, c2 = project_update(d, c, g, np.array([3e8, -4e8]), 0.05, 0.2, blocks, lr_d=1.0, lr_c=1.0)
    assert np.linalg.norm(d2 - d) == pytest.approx(0.05, rel=1e-12)
    assert np.linalg.norm(c2 - c) == pytest.approx(0.2, rel=1e-12)
    assert np.allclose(c2 - c, [-0.12, 0.16])
    # unset learning rate: the step fills the ball along the negative gradient
    d3, _ = project_update(d, c, np.array([0, 0, 1.0, 0, 0, 0]), np.zeros(2), 0.1, 0.1, blocks)
    assert np.linalg.norm(d3 - d) <= 0.1 + 1e-12
    assert d3[2] < 0.25


def test_weights_stay_on_simplex_over_random_updates(rng):
    d = np.concatenate([rng.normal(size=3), np.full(8, 0.125), rng.normal(size=2), np.full(4, 0.25)])
    blocks = [(3, 8), (13, 4)]
    c = np.zeros(3)
    for _ in range(100):
        d_new, c_new = project_update(d, c, rng.normal(size=len(d)) * 10, rng.normal(size=3), 0.3, 0.2, blocks,
                                      lr_d=rng.uniform(0.01, 1.0))
        assert np.linalg.norm(d_new - d) <= 0.3 + 1e-12
        assert np.linalg.norm(c_new - c) <= 0.2 + 1e-12
        for off, n in blocks:
            w = d_new[off:off + n]
            assert np.all(w >= 0) and abs(w.sum() - 1.0) <= 1e-12
        d, c = d_new, c_new


def test_clamp_and_design_projection():
    assert np.array_equal(clamp_norm([3.0, 4.0], 10.0), [3.0, 4.0])
    assert np.allclose(clamp_norm([3.0, 4.0], 1.0), [0.6, 0.8])
    assert np.allclose(project_design([5.0, 2.0, 0.0], [(1, 2)]), [5.0, 1.0, 0.0])


def test_adam_first_step_is_signed_lr():
    opt = Adam(0.1)
    step = opt.step(np.array([3.0, -0.5, 0.0]))
    assert np.allclose(step, [-0.1, 0.1, 0.0], atol=1e-7)


def slider_closed_form(kp, kd, dt, horizon, target):
    """Terminal position is affine in the constant target; solve for the exact optimum."""
    def run(c):
        den = 1.0 / dt**2 + 2 * kp + 2 * kd / dt**2
        prev = th = 0.0
        for _ in range(horizon):
            nxt = (1.0 / dt**2 * (2 * th - prev) + 2 * kp * c + 2 * kd / dt * (th / dt)) / den
            prev, th = th, nxt
        return th

    a = run(0.0)
    b = run(1.0) - a
    return (target - a) / b


def test_reacher1_reaches_closed_form_optimum():
    scene = load_scene(SCENES / "reacher1.json")
    p = scene.params
    c_star = slider_closed_form(p.kp, p.kd, p.dt, scene.horizon, 0.5)
    hist = codesign_optimize(scene.problem(), 200)
    assert hist.loss[-1] <= 0.01 * hist.loss[0]
    assert hist.params[-1][0] == pytest.approx(c_star, abs=1e-3)
    problem = scene.problem()
    assert problem.evaluate(problem.robot.design_vector(), np.array([c_star]), False)[0] < 1e-12


def test_projected_gradient_optimizer_on_reacher1():
    scene = load_scene(SCENES / "reacher1.json")
    problem = scene.problem()
    problem.optimizer = "projected_gradient"
    hist = codesign_optimize(problem, 60)
    assert hist.loss[-1] <= 0.01 * hist.loss[0]


def chain_problem(**kw):
    robot, params, theta = chain2()
    args = dict(robot=robot, params=params, theta0=theta, theta_prev=theta, policy=ConstantPolicy(2, params.dt),
                c0=np.array([0.35, 0.2]), loss=PointTargetLoss(2, 23, [1.5, 0, 0.3]), horizon=5, radius_d=0.05,
                radius_c=0.05)
    args.update(kw)
    return CodesignProblem(**args)


def test_zero_radii_freeze_everything():
    pr = chain_problem(radius_d=0.0, radius_c=0.0)
    hist = codesign_optimize(pr, 4)
    assert len(hist.loss) == 5
    assert all(v == hist.loss[0] for v in hist.loss)
    assert all(np.array_equal(d, hist.design[0]) for d in hist.design)
    assert all(np.array_equal(c, hist.params[0]) for c in hist.params)


@pytest.mark.parametrize("optimizer", ["adam", "projected_gradient"])
def test_trust_region_and_feasibility_every_iteration(optimizer):
    pr = chain_problem(optimizer=optimizer, radius_d=0.08, radius_c=0.03)
    hist = codesign_optimize(pr, 6)
    blocks = pr.robot.weight_blocks()
    for k in range(1, len(hist.loss)):
        assert np.linalg.norm(hist.design[k] - hist.design[k - 1]) <= 0.08 + 1e-12
        assert np.linalg.norm(hist.params[k] - hist.params[k - 1]) <= 0.03 + 1e-12
        for off, n in blocks:
            w = hist.design[k][off:off + n]
            assert np.all(w >= 0) and abs(w.sum() - 1) <= 1e-12
    assert hist.loss[-1] < hist.loss[0]


def test_design_mask_holds_coordinates():
    pr = chain_problem(design_mask=np.zeros(chain2()[0].ndesign, dtype=bool))
    hist = codesign_optimize(pr, 3)
    assert all(np.array_equal(d, hist.design[0]) for d in hist.design)


def test_history_is_deterministic():
    a = codesign_optimize(chain_problem(), 3)
    b = codesign_optimize(chain_problem(), 3)
    assert a.loss == b.loss
    assert all(np.array_equal(x, y) for x, y in zip(a.design, b.design))


class FlakyProblem(CodesignProblem):
    """Fails whenever the control moves further than ``limit`` from the start."""

    limit = 0.01

    def evaluate(self, d, c, gradient=True):
        if np.linalg.norm(c - self.c0) > self.limit:
            raise StepFailure("forced failure", 0)
        return super().evaluate(d, c, gradient)


def test_failed_rollouts_halve_radii():
    base = chain_problem(radius_c=0.035, radius_d=0.0)
    pr = FlakyProblem(**{k: getattr(base, k) for k in base.__dataclass_fields__})
    hist = codesign_optimize(pr, 1)
    assert hist.radius_c[1] == pytest.approx(0.035 / 4)
    assert hist.radius_d[1] == 0.0


def test_persistent_failure_raises():
    base = chain_problem(radius_c=1.0)
    pr = FlakyProblem(**{k: getattr(base, k) for k in base.__dataclass_fields__})
    pr.limit = 1e-9
    with pytest.raises(CodesignError) as info:
        codesign_optimize(pr, 2)
    assert info.value.iteration == 0


@pytest.mark.parametrize("kw", [{"horizon": 0}, {"radius_d": -1.0}, {"optimizer": "sgd"}])
def test_problem_validation(kw):
    with pytest.raises(ValueError):
        chain_problem(**kw)

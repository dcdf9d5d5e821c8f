import copy
import json
import subprocess
import sys

import numpy as np
import pytest

from helpers import SCENES
from hullsim.cli import main, power_law_exponent, sphere_hull
from hullsim.codesign import PointTargetLoss, SinePolicy
from hullsim.geometry import gjk_distance
from hullsim.scene import (SceneError, ScenePenetrationError, load_scene, loads_scene, read_csv, scene_from_dict,
                           write_csv)

MINIMAL = {"vertices": [[0, 0, 0]], "links": [{"hulls": [[0]], "joint": {"kind": "free6"}}]}


def scene_data(name):
    return json.loads((SCENES / f"{name}.json").read_text())


def test_minimal_scene_defaults():
    sc = scene_from_dict(MINIMAL)
    p = sc.params
    assert p.dt == 0.01 and p.kp == 0.0 and p.mu == 0.0
    assert np.allclose(p.gravity, [0, 0, -9.81])
    assert p.barrier.s == 0.1 and p.barrier.eps == 1e-6
    assert np.array_equal(sc.theta0, np.zeros(6)) and np.array_equal(sc.theta_prev, np.zeros(6))
    assert sc.make_policy() == (None, None)
    assert sc.make_loss() is None


@pytest.mark.parametrize("name", ["resting_box", "free_vertex", "chain2", "reacher1", "reacher3"])
def test_round_trip_is_lossless(name, tmp_path):
    sc = load_scene(SCENES / f"{name}.json")
    text = sc.dumps()
    again = loads_scene(text)
    assert again.dumps() == text
    assert again.digest() == sc.digest()
    sc.save(tmp_path / "s.json")
    assert load_scene(tmp_path / "s.json").dumps() == text
    assert np.array_equal(again.robot.slots, sc.robot.slots)
    assert np.array_equal(again.theta0, sc.theta0)


def test_awkward_floats_survive_round_trip():
    data = copy.deepcopy(MINIMAL)
    data["vertices"] = [[0.1 + 0.2, 1e-300, -2.5e17]]
    data["params"] = {"dt": 1 / 3}
    sc = scene_from_dict(data)
    back = json.loads(sc.dumps())
    assert back["vertices"][0] == [0.1 + 0.2, 1e-300, -2.5e17]
    assert back["params"]["dt"] == 1 / 3


def edit(base, path, value):
    data = copy.deepcopy(base)
    node = data
    for key in path[:-1]:
        node = node[key]
    if value is KeyError:
        del node[path[-1]]
    else:
        node[path[-1]] = value
    return data


@pytest.mark.parametrize("path, value, field", [
    (("vertices",), KeyError, "vertices"),
    (("vertices",), [[0, 0]], "vertices[0]"),
    (("links",), [], "links"),
    (("links", 0, "hulls"), [[5]], "links[0].hulls[0]"),
    (("links", 0, "joint", "kind"), "hinge", "links[0].joint.kind"),
    (("links", 0, "joint", "parent"), 3, "links[0].joint.parent"),
    (("links", 0, "joint", "wobble"), 1, "links[0].joint.wobble"),
    (("params",), {"dt": -1.0}, "params.dt"),
    (("params",), {"s": 1.5}, "params.s"),
    (("params",), {"kp": -2.0}, "params.kp"),
    (("params",), {"newton": {"grad_tol": 0}}, "params.newton.grad_tol"),
    (("params",), {"newton": {"speed": 1}}, "params.newton.speed"),
    (("params",), {"frobnicate": 1}, "params.frobnicate"),
    (("initial",), {"theta": [0, 0]}, "initial.theta"),
    (("policy",), {"kind": "spline", "params": []}, "policy.kind"),
    (("policy",), {"kind": "constant", "params": [1.0]}, "policy.params"),
    (("loss",), {"kind": "point", "link": 4, "slot": 0, "target": [0, 0, 0]}, "loss.link"),
    (("codesign",), {"horizon": 0}, "codesign.horizon"),
    (("codesign",), {"horizon": 3, "design": "shape"}, "codesign.design"),
])
def test_schema_errors_name_the_field(path, value, field):
    with pytest.raises(SceneError) as info:
        scene_from_dict(edit(MINIMAL, path, value))
    assert info.value.field == field


def test_attachment_weights_validated():
    data = scene_data("chain2")
    data["links"][2]["joint"]["attach"]["weights"][4] = 0.5
    with pytest.raises(SceneError) as info:
        scene_from_dict(data)
    assert info.value.field == "links[2].joint.attach.weights"


def test_penetrating_scene_rejected():
    data = scene_data("resting_box")
    data["initial"]["theta"][2] = 0.2
    with pytest.raises(ScenePenetrationError) as info:
        scene_from_dict(data)
    assert info.value.pairs
    assert scene_from_dict(data, check_penetration=False).theta0[2] == 0.2


def test_scene_builds_problem_pieces():
    sc = load_scene(SCENES / "chain2.json")
    pol, c = sc.make_policy()
    assert pol.kind == "constant" and np.allclose(c, [0.35, 0.2])
    assert isinstance(sc.make_loss(), PointTargetLoss)
    mask = sc.design_mask()
    assert mask.sum() == 8
    pr = sc.problem("all")
    assert pr.design_mask.all() and pr.horizon == sc.horizon
    sine = SinePolicy(2, 0.01)
    assert sine.nparams == 20


def test_csv_round_trip(tmp_path):
    rows = [[1, 0.1 + 0.2, -1e-310], [2, np.float64(1 / 3), 5.0]]
    write_csv(tmp_path / "a.csv", {"b": 1, "a": [1, 2]}, ["k", "x", "y"], rows)
    header, cols, back = read_csv(tmp_path / "a.csv")
    assert header == {"a": [1, 2], "b": 1}
    assert cols == ["k", "x", "y"]
    assert back[0][1] == 0.1 + 0.2 and back[0][2] == -1e-310 and back[1][1] == 1 / 3
    first = (tmp_path / "a.csv").read_text().splitlines()[0]
    assert first == '# {"a": [1, 2], "b": 1}'


# ---------------------------------------------------------------- CLI

def test_simulate_writes_valid_trajectory(tmp_path, capsys):
    out = tmp_path / "t.csv"
    assert main(["simulate", "--scene", str(SCENES / "resting_box.json"), "--steps", "30", "--out", str(out)]) == 0
    header, cols, rows = read_csv(out)
    assert cols[0] == "t" and "min_distance" in cols and len(rows) == 30
    ts = [r[0] for r in rows]
    assert ts == sorted(set(ts)) and ts[0] == 1
    assert all(r[cols.index("min_distance")] > 0 for r in rows)
    assert "steps=30" in capsys.readouterr().out


def test_simulate_is_byte_deterministic(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"t{k}.csv"
        main(["simulate", "--scene", str(SCENES / "chain2.json"), "--steps", "15", "--out", str(out)])
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_free_vertex_trajectory_is_ballistic(tmp_path):
    out = tmp_path / "t.csv"
    main(["simulate", "--scene", str(SCENES / "free_vertex.json"), "--steps", "10", "--out", str(out)])
    _, cols, rows = read_csv(out)
    x = [r[cols.index("theta_0")] for r in rows]
    z = [r[cols.index("theta_2")] for r in rows]
    dt = 0.01
    for k, (xk, zk) in enumerate(zip(x, z), start=1):
        tau = k * dt
        assert xk == pytest.approx(tau, abs=1e-10)
        # position-level Verlet from theta_prev = -dt * v reproduces the drift exactly
        n = k
        assert zk == pytest.approx(tau - 9.81 * dt**2 * n * (n + 1) / 2, abs=1e-10)


@pytest.mark.parametrize("target", ["contact", "friction", "step", "trajectory"])
def test_gradcheck_chain_passes(target, capsys):
    args = ["gradcheck", "--scene", str(SCENES / "chain2.json"), "--target", target, "--seed", "7"]
    if target == "trajectory":
        args += ["--horizon", "4"]
    assert main(args) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out


def test_codesign_history(tmp_path, capsys):
    out = tmp_path / "h.csv"
    assert main(["codesign", "--scene", str(SCENES / "reacher1.json"), "--iters", "5", "--out", str(out)]) == 0
    header, cols, rows = read_csv(out)
    assert len(rows) == 6 and cols[:4] == ["iter", "loss", "radius_d", "radius_c"]
    assert rows[-1][1] < rows[0][1]
    assert header["iters"] == 5
    out2 = tmp_path / "h2.csv"
    main(["codesign", "--scene", str(SCENES / "reacher1.json"), "--iters", "5", "--out", str(out2)])
    assert out.read_bytes() == out2.read_bytes()


def test_bench_reports_exponent(tmp_path, capsys):
    out = tmp_path / "b.csv"
    assert main(["bench", "--scene", str(SCENES / "resting_box.json"), "--hull-sizes", "8,16",
                 "--repeats", "3", "--steps", "1", "--out", str(out)]) == 0
    _, cols, rows = read_csv(out)
    assert [r[0] for r in rows] == [8, 16]
    assert "power-law exponent" in capsys.readouterr().out


def test_bench_hull_placement_is_active():
    A = sphere_hull(32)
    assert np.allclose(np.linalg.norm(A, axis=1), 0.5)
    # vertices lie on the sphere, so the polytope gap is at least the sphere gap
    assert 0.5 <= gjk_distance(A, A + [0, 0, 1.5]).distance < 0.6
    assert power_law_exponent([8, 16, 32], [1.0, 2.0, 4.0]) == pytest.approx(1.0)


def test_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(edit(MINIMAL, ("params",), {"dt": 0})))
    assert main(["simulate", "--scene", str(bad), "--steps", "1", "--out", str(tmp_path / "x.csv")]) == 3
    assert main(["simulate", "--scene", str(tmp_path / "nope.json"), "--steps", "1",
                 "--out", str(tmp_path / "x.csv")]) == 3
    pen = scene_data("resting_box")
    pen["initial"]["theta"][2] = 0.2
    bad.write_text(json.dumps(pen))
    assert main(["simulate", "--scene", str(bad), "--steps", "1", "--out", str(tmp_path / "x.csv")]) == 4
    # a near-massless body makes the step sensitivities singular
    light = scene_data("free_vertex")
    light["links"][0]["density"] = 1e-15
    bad.write_text(json.dumps(light))
    assert main(["gradcheck", "--scene", str(bad), "--target", "step"]) == 5
    with pytest.raises(SystemExit) as info:
        main(["simulate", "--steps", "1"])
    assert info.value.code == 2
    assert "scene error" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    out = tmp_path / "t.csv"
    proc = subprocess.run([sys.executable, "-m", "hullsim", "simulate", "--scene", str(SCENES / "free_vertex.json"),
                           "--steps", "3", "--out", str(out)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert len(read_csv(out)[2]) == 3
    proc = subprocess.run([sys.executable, "-m", "hullsim", "bogus"], capture_output=True, text=True)
    assert proc.returncode == 2

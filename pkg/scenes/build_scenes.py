"""Regenerate the bundled scene files.

Run ``python3 scenes/build_scenes.py`` from the repository root.
"""
from __future__ import annotations

import itertools
import json
from pathlib import Path

import numpy as np

HERE = Path(__file__).resolve().parent


def box(lo, hi) -> list:
    return [list(map(float, p)) for p in itertools.product(*zip(lo, hi))]


def ground_link() -> dict:
    return {"name": "ground", "hulls": [list(range(8))], "joint": {"kind": "fixed"}}


def end_weights() -> list:
    # the four vertices with the largest x of a box() hull
    return [0.0, 0.0, 0.0, 0.0, 0.25, 0.25, 0.25, 0.25]


def middle_weights() -> list:
    return [0.125] * 8


def resting_box() -> dict:
    verts = box([-3, -3, -1], [3, 3, 0]) + box([-0.5] * 3, [0.5] * 3)
    return {
        "name": "resting_box",
        "vertices": verts,
        "links": [ground_link(),
                  {"name": "box", "hulls": [list(range(8, 16))], "joint": {"kind": "free6"}}],
        "params": {"dt": 0.01, "mu": 0.5},
        "initial": {"theta": [0.0, 0.0, 0.69, 0.0, 0.0, 0.0]},
    }


def free_vertex() -> dict:
    return {
        "name": "free_vertex",
        "vertices": [[0.0, 0.0, 0.0]],
        "links": [{"name": "point", "hulls": [[0]], "joint": {"kind": "free6"}}],
        "params": {"dt": 0.01},
        "initial": {"theta": [0.0] * 6, "theta_dot": [1.0, 0.0, 1.0, 0.0, 0.0, 0.0]},
    }


def chain2() -> dict:
    """Two revolute links hanging over the ground, tip inside the contact band."""
    verts = box([-3, -3, -1], [3, 3, 0]) + box([0, -0.1, -0.1], [1, 0.1, 0.1]) + box([0, -0.1, -0.1], [0.8, 0.1, 0.1])
    theta = [0.3, 0.3]
    return {
        "name": "chain2",
        "vertices": verts,
        "links": [
            ground_link(),
            {"name": "upper", "hulls": [list(range(8, 16))],
             "joint": {"kind": "revolute", "parent": 0, "axis": [0.0, 1.0, 0.0], "origin": [0.0, 0.0, 1.0]}},
            {"name": "lower", "hulls": [list(range(16, 24))], "design": True,
             "joint": {"kind": "revolute", "parent": 1, "axis": [0.0, 1.0, 0.0],
                       "attach": {"hull": 0, "weights": end_weights()}}},
        ],
        "params": {"dt": 0.01, "mu": 0.5, "kp": 50.0, "kd": 0.1, "skip_adjacent": True},
        "initial": {"theta": theta},
        "policy": {"kind": "constant", "params": [0.35, 0.2]},
        "loss": {"kind": "point", "link": 2, "slot": 23, "target": [1.5, 0.0, 0.3]},
        "codesign": {"horizon": 10, "radius_d": 0.01, "radius_c": 0.01, "design": "weights"},
    }


def reacher3() -> dict:
    """Planar three-link reacher whose target lies beyond the nominal reach.

    Each child joint starts at the centre of its parent box; moving the
    attachment towards the far face extends the reach.
    """
    # children sit 0.25 above their parent so non-adjacent links never meet
    verts = box([0, -0.1, -0.1], [1, 0.1, 0.1])
    for _ in range(2):
        verts += box([0, -0.1, 0.15], [1, 0.1, 0.35])
    links = [{"name": "link0", "hulls": [list(range(0, 8))],
              "joint": {"kind": "revolute", "axis": [0.0, 0.0, 1.0]}}]
    for i in (1, 2):
        links.append({"name": f"link{i}", "hulls": [list(range(8 * i, 8 * i + 8))], "design": True,
                      "joint": {"kind": "revolute", "parent": i - 1, "axis": [0.0, 0.0, 1.0],
                                "attach": {"hull": 0, "weights": middle_weights()}}})
    target = np.array([2.4 * np.cos(0.6), 2.4 * np.sin(0.6), 0.6])
    return {
        "name": "reacher3",
        "vertices": verts,
        "links": links,
        "params": {"dt": 0.01, "gravity": [0.0, 0.0, 0.0], "kp": 200.0, "kd": 0.15, "skip_adjacent": True},
        "initial": {"theta": [0.0, 0.0, 0.0]},
        "policy": {"kind": "constant", "params": [0.0, 0.0, 0.0]},
        # slot 23 is the (+x, +y, +z) corner of the last link
        "loss": {"kind": "point", "link": 2, "slot": 23, "target": target.tolist()},
        "codesign": {"horizon": 30, "radius_d": 0.01, "radius_c": 0.01, "design": "weights"},
    }


def reacher1() -> dict:
    """One prismatic dof driven by a PD target; the terminal loss is quadratic."""
    return {
        "name": "reacher1",
        "vertices": box([-0.1] * 3, [0.1] * 3),
        "links": [{"name": "slider", "hulls": [list(range(8))],
                   "joint": {"kind": "prismatic", "axis": [1.0, 0.0, 0.0]}}],
        "params": {"dt": 0.01, "gravity": [0.0, 0.0, 0.0], "kp": 200.0, "kd": 0.2},
        "initial": {"theta": [0.0]},
        "policy": {"kind": "constant", "params": [0.0]},
        "loss": {"kind": "joint", "target": [0.5]},
        "codesign": {"horizon": 20, "radius_d": 0.0, "radius_c": 0.02, "design": "none"},
    }


SCENES = {"resting_box": resting_box, "free_vertex": free_vertex, "chain2": chain2, "reacher3": reacher3,
          "reacher1": reacher1}


def main() -> None:
    for name, fn in SCENES.items():
        (HERE / f"{name}.json").write_text(json.dumps(fn(), indent=1, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()

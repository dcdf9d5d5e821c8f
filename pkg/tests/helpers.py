"""Robot and hull builders shared by the tests."""
import itertools
from pathlib import Path

import numpy as np

from hullsim.dynamics import StepParams
from hullsim.kinematics import Joint, Link, Robot, exp_so3

ROOT = Path(__file__).resolve().parents[1]
SCENES = ROOT / "scenes"


def box(lo, hi) -> np.ndarray:
    return np.array(list(itertools.product(*zip(lo, hi))), dtype=float)


CUBE = box([-0.5] * 3, [0.5] * 3)
GROUND = box([-3, -3, -1], [3, 3, 0])


def random_hull(rng, m: int, radius: float = 0.5) -> np.ndarray:
    pts = rng.standard_normal((m, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return radius * pts * rng.uniform(0.6, 1.0, (m, 1))


def random_pose(rng, points, scale: float = 1.0):
    return points @ exp_so3(rng.standard_normal(3) * scale).T


def face_pair(rng, gap: float, tilt: float = 0.05, shift: float = 0.2):
    """Two nearly aligned unit cubes stacked along z with a small gap."""
    A = CUBE @ exp_so3(rng.standard_normal(3) * tilt).T
    B = CUBE @ exp_so3(rng.standard_normal(3) * tilt).T
    B = B + np.array([shift * rng.standard_normal(), shift * rng.standard_normal(), 0.0])
    B[:, 2] += A[:, 2].max() - B[:, 2].min() + gap
    return A, B


def box_on_ground(z0: float = 0.69, mu: float = 0.5, **kw):
    slots = np.vstack([GROUND, CUBE])
    robot = Robot(slots, [Link([list(range(8))], Joint("fixed")), Link([list(range(8, 16))], Joint("free6"))])
    return robot, StepParams(mu=mu, **kw), np.array([0.0, 0.0, z0, 0.0, 0.0, 0.0])


def chain2(mu: float = 0.5, kp: float = 50.0, kd: float = 0.1):
    """Two revolute links over a ground box; the lower link's attachment is a design variable."""
    slots = np.vstack([GROUND, box([0, -.1, -.1], [1, .1, .1]), box([0, -.1, -.1], [.8, .1, .1])])
    w = np.zeros(8)
    w[4:] = 0.25
    links = [Link([list(range(8))], Joint("fixed")),
             Link([list(range(8, 16))], Joint("revolute", parent=0, axis=np.array([0, 1.0, 0]),
                                                origin=np.array([0, 0, 1.0]))),
             Link([list(range(16, 24))], Joint("revolute", parent=1, axis=np.array([0, 1.0, 0]),
                                                 attach_hull=0, attach_weights=w), design=True)]
    params = StepParams(mu=mu, kp=kp, kd=kd, skip_adjacent=True)
    return Robot(slots, links), params, np.array([0.3, 0.3])

"""Convex hulls in vertex form, GJK distance with witness points, and a BVH.

Hulls are stored as vertex clouds; the hull itself is never triangulated.
Every query goes through support mappings, so degenerate hulls (a point, a
segment, a planar polygon) need no special handling.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Hashable, Sequence

import numpy as np

GJK_TOL = 1e-10
TOUCH_TOL = 1e-12


@dataclass
class ConvexHull:
    """Convex hull of ``vertices`` (local frame), owned by ``link``."""

    vertices: np.ndarray
    link: int = 0
    hull: int = 0

    def __post_init__(self):
        self.vertices = np.atleast_2d(np.asarray(self.vertices, dtype=float))
        if self.vertices.shape[0] < 1 or self.vertices.shape[1] != 3:
            raise ValueError("a hull needs at least one 3D vertex")
        if not np.all(np.isfinite(self.vertices)):
            raise ValueError("hull vertices must be finite")

    def transformed(self, T: np.ndarray) -> np.ndarray:
        return self.vertices @ T[:3, :3].T + T[:3, 3]


@dataclass(frozen=True)
class GjkResult:
    distance: float
    witness_a: np.ndarray
    witness_b: np.ndarray
    reliable: bool = True
    iterations: int = 0


def _min_norm_on_simplex(W: np.ndarray):
    """Closest point to the origin on the convex hull of up to four points.

    Enumerates faces of the simplex (Johnson's sub-algorithm) and keeps the
    smallest admissible affine projection.  Returns ``(point, weights)`` with
    weights over the rows of ``W``; zero weights mark dropped vertices.
    """
    k = W.shape[0]
    best = None
    best_norm = np.inf
    for size in range(1, k + 1):
        for idx in combinations(range(k), size):
            Y = W[list(idx)]
            if size == 1:
                lam = np.ones(1)
            else:
                E = Y[1:] - Y[0]
                M = E @ E.T
                rhs = -E @ Y[0]
                try:
                    sol = np.linalg.solve(M, rhs)
                except np.linalg.LinAlgError:
                    continue
                if not np.all(np.isfinite(sol)):
                    continue
                if np.linalg.cond(M) > 1e12:
                    continue
                lam = np.concatenate([[1.0 - sol.sum()], sol])
            if np.any(lam < -1e-12):
                continue
            lam = np.clip(lam, 0.0, None)
            lam /= lam.sum()
            pt = lam @ Y
            nrm = float(pt @ pt)
            if best is None or nrm < best_norm - 1e-15 * max(1.0, best_norm):
                best_norm = nrm
                weights = np.zeros(k)
                weights[list(idx)] = lam
                best = (pt, weights)
    return best


def gjk_distance(a, b, max_iter: int = 128) -> GjkResult:
    """Euclidean distance between ``CH(a)`` and ``CH(b)`` with witness points.

    Parameters
    ----------
    a, b : array_like, shape (M, 3)
        World-space vertex sets, both nonempty.

    Returns
    -------
    GjkResult
        ``distance`` is at most ``1e-12`` when the hulls touch or
        intersect; ``reliable`` is then False and the witnesses are only
        approximate.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("vertex sets must be nonempty")
    ia, ib = 0, 0
    simplex = [(a[ia] - b[ib], ia, ib)]
    v = simplex[0][0]
    weights = np.ones(1)
    it = 0
    for it in range(1, max_iter + 1):
        vv = float(v @ v)
        if vv <= TOUCH_TOL**2:
            break
        ia = int(np.argmax(a @ -v))
        ib = int(np.argmax(b @ v))
        w = a[ia] - b[ib]
        if vv - float(v @ w) <= GJK_TOL * max(1.0, vv):
            break
        if any(ia == s[1] and ib == s[2] for s in simplex):
            break
        simplex.append((w, ia, ib))
        res = _min_norm_on_simplex(np.array([s[0] for s in simplex]))
        if res is None:
            simplex.pop()
            break
        v, weights = res
        keep = weights > 0.0
        simplex = [s for s, kk in zip(simplex, keep) if kk]
        weights = weights[keep]
        if len(simplex) == 4:
            v = np.zeros(3)
            break
    wa = sum(lam * a[s[1]] for lam, s in zip(weights, simplex))
    wb = sum(lam * b[s[2]] for lam, s in zip(weights, simplex))
    dist = float(np.linalg.norm(v))
    if dist <= TOUCH_TOL:
        return GjkResult(0.0 if dist == 0.0 else dist, np.asarray(wa), np.asarray(wb), False, it)
    return GjkResult(dist, np.asarray(wa), np.asarray(wb), True, it)


@dataclass
class Aabb:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        if np.any(self.lo > self.hi):
            raise ValueError("Aabb requires lo <= hi")

    @classmethod
    def of_points(cls, pts) -> "Aabb":
        pts = np.atleast_2d(pts)
        return cls(pts.min(axis=0), pts.max(axis=0))

    def union(self, other: "Aabb") -> "Aabb":
        return Aabb(np.minimum(self.lo, other.lo), np.maximum(self.hi, other.hi))

    def contains(self, other: "Aabb") -> bool:
        return bool(np.all(self.lo <= other.lo) and np.all(other.hi <= self.hi))

    def overlaps(self, other: "Aabb", gap: float = 0.0) -> bool:
        """True when the boxes are within ``gap`` of each other on every axis."""
        return bool(np.all(self.lo <= other.hi + gap) and np.all(other.lo <= self.hi + gap))


@dataclass
class _Node:
    box: Aabb
    left: int = -1
    right: int = -1
    leaf: int = -1


@dataclass
class Bvh:
    """Binary AABB tree over leaves keyed by ``(link, hull)`` ids.

    The tree topology is fixed at build time; :meth:`refit` only updates
    the boxes.
    """

    keys: list
    nodes: list = field(default_factory=list)
    leaf_boxes: list = field(default_factory=list)

    @classmethod
    def build(cls, keys: Sequence[Hashable], points: Sequence[np.ndarray]) -> "Bvh":
        boxes = [Aabb.of_points(p) for p in points]
        tree = cls(list(keys), [], boxes)
        if boxes:
            tree._build(list(range(len(boxes))))
        return tree

    def _build(self, items: list) -> int:
        box = self.leaf_boxes[items[0]]
        for i in items[1:]:
            box = box.union(self.leaf_boxes[i])
        idx = len(self.nodes)
        self.nodes.append(_Node(box))
        if len(items) == 1:
            self.nodes[idx].leaf = items[0]
            return idx
        centers = np.array([0.5 * (self.leaf_boxes[i].lo + self.leaf_boxes[i].hi) for i in items])
        axis = int(np.argmax(box.hi - box.lo))
        order = np.argsort(centers[:, axis], kind="stable")
        half = len(items) // 2
        left = self._build([items[i] for i in order[:half]])
        right = self._build([items[i] for i in order[half:]])
        self.nodes[idx].left = left
        self.nodes[idx].right = right
        return idx

    def refit(self, points: Sequence[np.ndarray]) -> None:
        self.leaf_boxes = [Aabb.of_points(p) for p in points]
        if self.nodes:
            self._refit(0)

    def _refit(self, idx: int) -> Aabb:
        node = self.nodes[idx]
        if node.leaf >= 0:
            node.box = self.leaf_boxes[node.leaf]
        else:
            node.box = self._refit(node.left).union(self._refit(node.right))
        return node.box

    def overlapping_pairs(self, inflate: float, accept: Callable[[Hashable, Hashable], bool] | None = None):
        """Leaf pairs whose boxes, each grown by ``inflate / 2``, overlap.

        Pairs on the same link (first key component) are never returned.
        Output is sorted for determinism.
        """
        out = set()
        if not self.nodes:
            return []
        stack = [(0, 0)]
        while stack:
            i, j = stack.pop()
            ni, nj = self.nodes[i], self.nodes[j]
            if not ni.box.overlaps(nj.box, inflate):
                continue
            if ni.leaf >= 0 and nj.leaf >= 0:
                if ni.leaf == nj.leaf:
                    continue
                ka, kb = self.keys[ni.leaf], self.keys[nj.leaf]
                if ka[0] == kb[0]:
                    continue
                if kb < ka:
                    ka, kb = kb, ka
                if accept is None or accept(ka, kb):
                    out.add((ka, kb))
                continue
            if i == j:
                stack.append((ni.left, ni.left))
                stack.append((ni.right, ni.right))
                stack.append((ni.left, ni.right))
            elif ni.leaf >= 0 or (nj.leaf < 0 and _volume(nj.box) > _volume(ni.box)):
                stack.append((i, nj.left))
                stack.append((i, nj.right))
            else:
                stack.append((ni.left, j))
                stack.append((ni.right, j))
        return sorted(out)


def _volume(box: Aabb) -> float:
    return float(np.prod(box.hi - box.lo))


def bvh_build(keys, points) -> Bvh:
    return Bvh.build(keys, points)


def bvh_overlapping_pairs(bvh: Bvh, inflate: float, accept=None):
    return bvh.overlapping_pairs(inflate, accept)

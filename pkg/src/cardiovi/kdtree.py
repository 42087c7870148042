"""Exact nearest-neighbour kd-tree with deterministic tie-breaking."""
from __future__ import annotations

import numpy as np


class _Node:
    __slots__ = ("idx", "dim", "split", "left", "right")

    def __init__(self, idx=None, dim=0, split=0.0, left=None, right=None):
        self.idx = idx
        self.dim = dim
        self.split = split
        self.left = left
        self.right = right


class KDTree:
    """Static kd-tree over a point set of any dimension.

    ``query`` returns the index of the point minimising squared euclidean
    distance; among exactly equal distances the lowest index wins, which
    makes the answer identical to an exhaustive scan.
    """

    def __init__(self, points, leaf_size=8):
        self.points = np.array(points, dtype=float)
        if self.points.ndim != 2 or len(self.points) == 0:
            raise ValueError("KDTree needs a non-empty (n, d) array")
        self.points.setflags(write=False)
        self.leaf_size = leaf_size
        self._pts = self.points.tolist()
        self.root = self._build(np.arange(len(self.points)), 0)

    def _build(self, idx, depth):
        if len(idx) <= self.leaf_size:
            return _Node(idx=idx.tolist())
        spread = np.ptp(self.points[idx], axis=0)
        dim = int(np.argmax(spread))
        if spread[dim] == 0:
            return _Node(idx=idx.tolist())
        vals = self.points[idx, dim]
        order = np.argsort(vals, kind="stable")
        mid = len(idx) // 2
        split = float(vals[order[mid]])
        left = idx[vals < split]
        right = idx[vals >= split]
        if len(left) == 0:
            return _Node(idx=idx.tolist())
        return _Node(dim=dim, split=split, left=self._build(left, depth + 1), right=self._build(right, depth + 1))

    def query(self, q):
        """Return ``(index, squared_distance)`` of the nearest stored point."""
        q = [float(v) for v in q]
        best = [np.inf, -1]
        pts = self._pts

        def visit(node):
            if node.idx is not None:
                for i in node.idx:
                    p = pts[i]
                    d2 = 0.0
                    for a, b in zip(p, q):
                        d2 += (a - b) * (a - b)
                    if d2 < best[0] or (d2 == best[0] and i < best[1]):
                        best[0], best[1] = d2, i
                return
            diff = q[node.dim] - node.split
            near, far = (node.left, node.right) if diff < 0 else (node.right, node.left)
            visit(near)
            if diff * diff <= best[0]:
                visit(far)

        visit(self.root)
        return best[1], best[0]

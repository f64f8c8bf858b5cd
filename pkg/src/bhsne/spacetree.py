"""Quadtree (2-D) / octree (3-D) over an embedding.

Nodes are stored in flat arrays. The points of every node form the
contiguous slice ``perm[start[v]:end[v]]``, so each node's point list is
available without extra storage. Children of a node are contiguous, begin
at ``first_child[v]`` and number ``n_children[v]`` (zero for a leaf); only
non-empty quadrants get a child.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

MAX_DEPTH = 64
MIN_DIAGONAL = 1e-12
ROOT_MARGIN = 1e-5

STANDARD = 0
PAPER_LITERAL = 1

_CONDITIONS = {"standard": STANDARD, "paper-literal": PAPER_LITERAL}


def condition_code(condition):
    try:
        return _CONDITIONS[condition]
    except KeyError:
        raise ValueError(f"unknown summary condition {condition!r}") from None


@njit(cache=True)
def _summarizes(size, dist2, threshold, condition):
    """Whether a cell of diagonal ``size`` at squared distance ``dist2`` may
    stand in for its points."""
    if dist2 <= 0.0:
        return False
    if condition == STANDARD:
        # size / sqrt(dist2) < threshold, squared (both sides are >= 0)
        return size * size < threshold * threshold * dist2
    if size <= 0.0:
        return False
    return dist2 / size < threshold


@njit(cache=True)
def _build(Y):
    n, s = Y.shape
    n_quad = 1 << s
    cap = max(16, 4 * n)

    center = np.zeros((cap, s))
    half = np.zeros((cap, s))
    com = np.zeros((cap, s))
    count = np.zeros(cap, dtype=np.int64)
    start = np.zeros(cap, dtype=np.int64)
    end = np.zeros(cap, dtype=np.int64)
    first_child = np.full(cap, -1, dtype=np.int64)
    n_children = np.zeros(cap, dtype=np.int64)
    depth = np.zeros(cap, dtype=np.int64)

    perm = np.arange(n)
    code = np.empty(n, dtype=np.int64)
    scratch = np.empty(n, dtype=np.int64)
    bucket = np.zeros(n_quad + 1, dtype=np.int64)

    for d in range(s):
        lo = Y[0, d]
        hi = Y[0, d]
        for i in range(n):
            if Y[i, d] < lo:
                lo = Y[i, d]
            if Y[i, d] > hi:
                hi = Y[i, d]
        center[0, d] = 0.5 * (lo + hi)
        half[0, d] = 0.5 * (hi - lo) * (1.0 + ROOT_MARGIN)
    count[0] = n
    start[0] = 0
    end[0] = n
    n_nodes = 1

    v = 0
    while v < n_nodes:
        size2 = 0.0
        for d in range(s):
            size2 += half[v, d] * half[v, d]
        diag = 2.0 * np.sqrt(size2)
        if count[v] < 2 or diag < MIN_DIAGONAL or depth[v] >= MAX_DEPTH:
            v += 1
            continue

        # Counting sort of the node's points by quadrant code; bit d set
        # when the coordinate is strictly above the centre.
        for q in range(n_quad + 1):
            bucket[q] = 0
        for t in range(start[v], end[v]):
            p = perm[t]
            c = 0
            for d in range(s):
                if Y[p, d] > center[v, d]:
                    c |= 1 << d
            code[t] = c
            bucket[c + 1] += 1
        for q in range(n_quad):
            bucket[q + 1] += bucket[q]
        base = start[v]
        for t in range(start[v], end[v]):
            c = code[t]
            scratch[bucket[c]] = perm[t]
            bucket[c] += 1
        for t in range(end[v] - start[v]):
            perm[base + t] = scratch[t]

        if n_nodes + n_quad > cap:
            new_cap = 2 * cap
            center = _grow2(center, new_cap)
            half = _grow2(half, new_cap)
            com = _grow2(com, new_cap)
            count = _grow1(count, new_cap, 0)
            start = _grow1(start, new_cap, 0)
            end = _grow1(end, new_cap, 0)
            first_child = _grow1(first_child, new_cap, -1)
            n_children = _grow1(n_children, new_cap, 0)
            depth = _grow1(depth, new_cap, 0)
            cap = new_cap

        first_child[v] = n_nodes
        lo_t = base
        for q in range(n_quad):
            # After the scatter bucket[q] is the end offset of quadrant q.
            lo_idx = lo_t
            hi_idx = base + bucket[q]
            if hi_idx > lo_idx:
                c = n_nodes
                for d in range(s):
                    h = 0.5 * half[v, d]
                    half[c, d] = h
                    if q & (1 << d):
                        center[c, d] = center[v, d] + h
                    else:
                        center[c, d] = center[v, d] - h
                start[c] = lo_idx
                end[c] = hi_idx
                count[c] = hi_idx - lo_idx
                depth[c] = depth[v] + 1
                n_nodes += 1
                n_children[v] += 1
            lo_t = hi_idx
        v += 1

    # Centres of mass, children before parents (children have larger ids).
    for v in range(n_nodes - 1, -1, -1):
        if n_children[v] == 0:
            for t in range(start[v], end[v]):
                p = perm[t]
                for d in range(s):
                    com[v, d] += Y[p, d]
            for d in range(s):
                com[v, d] /= count[v]
        else:
            for c in range(first_child[v], first_child[v] + n_children[v]):
                for d in range(s):
                    com[v, d] += count[c] * com[c, d]
            for d in range(s):
                com[v, d] /= count[v]

    diag = np.empty(n_nodes)
    for v in range(n_nodes):
        size2 = 0.0
        for d in range(s):
            size2 += half[v, d] * half[v, d]
        diag[v] = 2.0 * np.sqrt(size2)

    return (center[:n_nodes].copy(), half[:n_nodes].copy(), com[:n_nodes].copy(),
            count[:n_nodes].copy(), start[:n_nodes].copy(), end[:n_nodes].copy(),
            first_child[:n_nodes].copy(), n_children[:n_nodes].copy(),
            depth[:n_nodes].copy(), diag, perm)


@njit(cache=True)
def _grow2(a, cap):
    out = np.zeros((cap, a.shape[1]))
    out[: a.shape[0]] = a
    return out


@njit(cache=True)
def _grow1(a, cap, fill):
    out = np.full(cap, fill, dtype=a.dtype)
    out[: a.shape[0]] = a
    return out


@dataclass
class SpaceTree:
    Y: np.ndarray
    center: np.ndarray
    half_extent: np.ndarray
    com: np.ndarray
    count: np.ndarray
    start: np.ndarray
    end: np.ndarray
    first_child: np.ndarray
    n_children: np.ndarray
    depth: np.ndarray
    diagonal: np.ndarray
    perm: np.ndarray

    @property
    def n_nodes(self):
        return self.count.shape[0]

    @property
    def dims(self):
        return self.Y.shape[1]

    def is_leaf(self, node):
        return self.n_children[node] == 0

    def children(self, node):
        first = self.first_child[node]
        return range(first, first + self.n_children[node])

    def points(self, node):
        return self.perm[self.start[node]:self.end[node]]

    def leaves(self):
        return np.flatnonzero(self.n_children == 0)


def build_tree(Y):
    """Build the space-partitioning tree over an ``n x s`` embedding, s in {2, 3}."""
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[1] not in (2, 3):
        raise ValueError(f"embedding must be n x 2 or n x 3, got shape {Y.shape}")
    if Y.shape[0] < 1:
        raise ValueError("embedding has no points")
    if not np.all(np.isfinite(Y)):
        raise ValueError("embedding contains non-finite coordinates")
    return SpaceTree(Y, *_build(Y))


def check_summary(tree, node, y_i, theta, i=None, condition="standard"):
    """Barnes-Hut test: may ``node`` summarize its points as seen from ``y_i``?

    A cell that contains point ``i`` is never summarized: its centre of mass
    includes ``i`` itself.
    """
    if theta < 0:
        raise ValueError("theta must be >= 0")
    if i is not None and i in tree.points(node):
        return False
    diff = np.asarray(y_i, dtype=np.float64) - tree.com[node]
    return bool(_summarizes(tree.diagonal[node], float(diff @ diff), float(theta),
                            condition_code(condition)))

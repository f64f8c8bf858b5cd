"""Vantage-point tree for exact k-nearest-neighbor search.

The tree is stored as flat arrays indexed by node id. Node ``v`` holds the
object ``item[v]`` and a ball radius ``radius[v]``; objects strictly inside
the ball live under ``inside[v]``, objects at distance ``>= radius[v]``
under ``outside[v]`` (-1 marks a missing child).

Any numba-jitted function ``metric(a, b) -> float`` over two 1-D float64
arrays can be used in place of the default Euclidean distance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

# Relative slack on the pruning radius so that candidates tied with the
# current furthest neighbour are never pruned by rounding in the bound.
_PRUNE_SLACK = 1e-12


@njit(cache=True, fastmath=False)
def euclidean(a, b):
    s = 0.0
    for k in range(a.shape[0]):
        t = a[k] - b[k]
        s += t * t
    return np.sqrt(s)


@njit(cache=True)
def _build(data, metric, draws):
    n = data.shape[0]
    item = np.empty(n, dtype=np.int64)
    radius = np.zeros(n)
    inside = np.full(n, -1, dtype=np.int64)
    outside = np.full(n, -1, dtype=np.int64)

    order = np.arange(n)
    dist = np.empty(n)
    scratch = np.empty(n, dtype=np.int64)

    # Work items: (node id, lo, hi) over order[lo:hi]; node ids are
    # assigned in creation order, so every node consumes one draw.
    stack_node = np.empty(n, dtype=np.int64)
    stack_lo = np.empty(n, dtype=np.int64)
    stack_hi = np.empty(n, dtype=np.int64)
    top = 0
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = n
    top = 1
    next_id = 1

    while top > 0:
        top -= 1
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]

        pick = lo + int(draws[node] * (hi - lo))
        if pick >= hi:
            pick = hi - 1
        tmp = order[lo]
        order[lo] = order[pick]
        order[pick] = tmp
        vantage = order[lo]
        item[node] = vantage
        if hi - lo == 1:
            continue

        rest = hi - lo - 1
        for t in range(lo + 1, hi):
            dist[t] = metric(data[vantage], data[order[t]])
        sorted_rest = np.sort(dist[lo + 1:hi])
        tau = sorted_rest[rest // 2]
        radius[node] = tau

        # Stable partition: strictly-inside first, then the rest.
        n_in = 0
        for t in range(lo + 1, hi):
            if dist[t] < tau:
                scratch[n_in] = order[t]
                n_in += 1
        m = n_in
        for t in range(lo + 1, hi):
            if dist[t] >= tau:
                scratch[m] = order[t]
                m += 1
        for t in range(rest):
            order[lo + 1 + t] = scratch[t]

        split = lo + 1 + n_in
        if split < hi:
            outside[node] = next_id
            stack_node[top] = next_id
            stack_lo[top] = split
            stack_hi[top] = hi
            top += 1
            next_id += 1
        if n_in > 0:
            inside[node] = next_id
            stack_node[top] = next_id
            stack_lo[top] = lo + 1
            stack_hi[top] = split
            top += 1
            next_id += 1
    return item, radius, inside, outside


@njit(cache=True)
def _heap_less(d1, i1, d2, i2):
    return d1 < d2 or (d1 == d2 and i1 < i2)


@njit(cache=True)
def _heap_push(hd, hi, size, d, idx):
    # Max-heap keyed on (distance, index).
    pos = size
    hd[pos] = d
    hi[pos] = idx
    while pos > 0:
        parent = (pos - 1) // 2
        if _heap_less(hd[parent], hi[parent], hd[pos], hi[pos]):
            hd[parent], hd[pos] = hd[pos], hd[parent]
            hi[parent], hi[pos] = hi[pos], hi[parent]
            pos = parent
        else:
            break


@njit(cache=True)
def _heap_replace_top(hd, hi, size, d, idx):
    hd[0] = d
    hi[0] = idx
    pos = 0
    while True:
        left = 2 * pos + 1
        right = left + 1
        big = pos
        if left < size and _heap_less(hd[big], hi[big], hd[left], hi[left]):
            big = left
        if right < size and _heap_less(hd[big], hi[big], hd[right], hi[right]):
            big = right
        if big == pos:
            break
        hd[big], hd[pos] = hd[pos], hd[big]
        hi[big], hi[pos] = hi[pos], hi[big]
        pos = big


@njit(cache=True)
def _search(data, item, radius, inside, outside, metric, query, k, out_idx, out_dist):
    n = item.shape[0]
    hd = np.empty(k)
    hi = np.empty(k, dtype=np.int64)
    size = 0
    target = data[query]

    # Each stack entry carries a lower bound on the distance from the
    # target to anything in its subtree; the bound is re-checked against
    # the current tau when the entry is popped.
    stack = np.empty(n + 1, dtype=np.int64)
    bound = np.empty(n + 1)
    top = 1
    stack[0] = 0
    bound[0] = 0.0
    while top > 0:
        top -= 1
        node = stack[top]
        if size == k and bound[top] > hd[0] * (1.0 + _PRUNE_SLACK):
            continue
        obj = item[node]
        d = metric(target, data[obj])
        if obj != query:
            if size < k:
                _heap_push(hd, hi, size, d, obj)
                size += 1
            elif _heap_less(d, obj, hd[0], hi[0]):
                _heap_replace_top(hd, hi, size, d, obj)

        r = radius[node]
        lb_in = d - r
        if lb_in < 0.0:
            lb_in = 0.0
        lb_out = r - d
        if lb_out < 0.0:
            lb_out = 0.0
        # Push the child to visit second first.
        if d < r:
            if outside[node] >= 0:
                stack[top] = outside[node]
                bound[top] = lb_out
                top += 1
            if inside[node] >= 0:
                stack[top] = inside[node]
                bound[top] = lb_in
                top += 1
        else:
            if inside[node] >= 0:
                stack[top] = inside[node]
                bound[top] = lb_in
                top += 1
            if outside[node] >= 0:
                stack[top] = outside[node]
                bound[top] = lb_out
                top += 1

    # Heap-sort the survivors into ascending (distance, index) order.
    for end in range(size - 1, -1, -1):
        out_dist[end] = hd[0]
        out_idx[end] = hi[0]
        hd[0] = hd[end]
        hi[0] = hi[end]
        pos = 0
        while True:
            left = 2 * pos + 1
            right = left + 1
            big = pos
            if left < end and _heap_less(hd[big], hi[big], hd[left], hi[left]):
                big = left
            if right < end and _heap_less(hd[big], hi[big], hd[right], hi[right]):
                big = right
            if big == pos:
                break
            hd[big], hd[pos] = hd[pos], hd[big]
            hi[big], hi[pos] = hi[pos], hi[big]
            pos = big


@njit(cache=True, parallel=True)
def _search_all(data, item, radius, inside, outside, metric, k, out_idx, out_dist):
    n = data.shape[0]
    for q in prange(n):
        _search(data, item, radius, inside, outside, metric, q, k,
                out_idx[q], out_dist[q])


@dataclass
class VpTree:
    data: np.ndarray
    item: np.ndarray
    radius: np.ndarray
    inside: np.ndarray
    outside: np.ndarray
    metric: object

    @property
    def n(self):
        return self.item.shape[0]


def build(data, metric=euclidean, seed=0):
    """Bulk-build a vantage-point tree with seeded random vantage points."""
    data = np.ascontiguousarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 1:
        raise ValueError("need a 2-D array with at least one row")
    draws = np.random.default_rng(seed).random(data.shape[0])
    item, radius, inside, outside = _build(data, metric, draws)
    return VpTree(data, item, radius, inside, outside, metric)


def _clamp_k(k, n):
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > n - 1:
        warnings.warn(f"k={k} exceeds n-1={n - 1}; clamping", RuntimeWarning, stacklevel=3)
        k = n - 1
    return k


def knn(tree, query_index, k):
    """The ``k`` nearest other objects to ``query_index``.

    Returns ``(indices, distances)`` sorted by ascending distance; ties
    resolve to the lower index.
    """
    k = _clamp_k(k, tree.n)
    idx = np.empty(k, dtype=np.int64)
    dist = np.empty(k)
    _search(tree.data, tree.item, tree.radius, tree.inside, tree.outside,
            tree.metric, int(query_index), k, idx, dist)
    return idx, dist


def knn_graph(data, k, metric=euclidean, seed=0, tree=None):
    """k-nearest-neighbor lists for every object, as two ``n x k`` arrays."""
    if tree is None:
        tree = build(data, metric=metric, seed=seed)
    n = tree.n
    k = _clamp_k(k, n)
    idx = np.empty((n, k), dtype=np.int64)
    dist = np.empty((n, k))
    _search_all(tree.data, tree.item, tree.radius, tree.inside, tree.outside,
                tree.metric, k, idx, dist)
    return idx, dist


def iter_nodes(tree):
    """Yield ``(node, depth)`` for every node, parents before children."""
    stack = [(0, 0)]
    while stack:
        node, depth = stack.pop()
        yield node, depth
        for child in (tree.inside[node], tree.outside[node]):
            if child >= 0:
                stack.append((int(child), depth + 1))


def subtree_items(tree, node):
    out = []
    stack = [node]
    while stack:
        v = stack.pop()
        out.append(int(tree.item[v]))
        for child in (tree.inside[v], tree.outside[v]):
            if child >= 0:
                stack.append(int(child))
    return out

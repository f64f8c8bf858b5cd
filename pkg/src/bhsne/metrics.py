"""Evaluation: exact KL cost and leave-one-out 1-nearest-neighbor error."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

from .gradient import exact_z, kl_from_z
from . import vptree

BRUTE_FORCE_MAX_N = 20000


def kl_cost(P, Y):
    """KL(P || Q) with Q from the Student-t kernel, Z summed exactly."""
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    return kl_from_z(P, Y, exact_z(Y))


@njit(cache=True, parallel=True)
def _nearest_other(Y, out):
    n, s = Y.shape
    for i in prange(n):
        best = np.inf
        arg = -1
        for j in range(n):
            if j == i:
                continue
            d2 = 0.0
            for d in range(s):
                diff = Y[i, d] - Y[j, d]
                d2 += diff * diff
            if d2 < best:
                best = d2
                arg = j
        out[i] = arg


def nearest_neighbors(Y):
    """Index of the Euclidean-nearest other point for every point (ties: lower index)."""
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    n = Y.shape[0]
    if n <= BRUTE_FORCE_MAX_N:
        out = np.empty(n, dtype=np.int64)
        _nearest_other(Y, out)
        return out
    idx, _ = vptree.knn_graph(Y, 1)
    return idx[:, 0]


def knn_error(Y, labels):
    """Fraction of points whose nearest other point carries a different label."""
    labels = np.asarray(labels)
    if labels.shape[0] != Y.shape[0]:
        raise ValueError(f"{labels.shape[0]} labels for {Y.shape[0]} points")
    if Y.shape[0] < 2:
        raise ValueError("need at least two points")
    nn = nearest_neighbors(Y)
    return float(np.mean(labels[nn] != labels))


@dataclass
class EvalReport:
    kl_cost: float
    knn_error: float | None
    wall_time_seconds: float
    config: dict = field(default_factory=dict)

    def header(self):
        return ["kl_cost", "knn_error", "wall_time_seconds", *self.config.keys()]

    def row(self):
        knn = "" if self.knn_error is None else repr(self.knn_error)
        return [repr(self.kl_cost), knn, repr(self.wall_time_seconds),
                *(str(v) for v in self.config.values())]

    def to_csv(self):
        return ",".join(self.header()) + "\n" + ",".join(self.row()) + "\n"

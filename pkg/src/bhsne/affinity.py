"""Input similarities: Gaussian conditionals calibrated to a perplexity,
symmetrized into joint probabilities.

Sparse affinities are ``scipy.sparse.csr_matrix`` objects with sorted
column indices, no stored diagonal, symmetric values and unit total.
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.sparse as sp
from numba import njit, prange

from .vptree import euclidean, knn_graph

MAX_BISECTIONS = 200
DEFAULT_TOL = 1e-10  # on log2-perplexity, i.e. entropy in bits

@njit(cache=True)
def _entropy_bits(sqd, beta, probs):
    """Fill ``probs`` with the conditional for ``beta``; return its entropy in bits.

    ``sqd`` must already be shifted so its minimum is zero.
    """
    total = 0.0
    for j in range(sqd.shape[0]):
        probs[j] = np.exp(-beta * sqd[j])
        total += probs[j]
    weighted = 0.0
    for j in range(sqd.shape[0]):
        probs[j] /= total
        weighted += probs[j] * sqd[j]
    return (np.log(total) + beta * weighted) / np.log(2.0)


@njit(cache=True)
def _calibrate(sqd, log2_u, tol, probs):
    """Bisection on beta for one object. Returns (beta, reached)."""
    n = sqd.shape[0]
    lo_d = sqd[0]
    for j in range(n):
        if sqd[j] < lo_d:
            lo_d = sqd[j]
    shifted = np.empty(n)
    spread = 0.0
    for j in range(n):
        shifted[j] = sqd[j] - lo_d
        if shifted[j] > spread:
            spread = shifted[j]

    if spread == 0.0:
        # Equidistant neighbours: every beta gives the uniform distribution.
        for j in range(n):
            probs[j] = 1.0 / n
        return 1.0, abs(np.log2(n) - log2_u) < tol

    beta = 1.0
    h = _entropy_bits(shifted, beta, probs)
    if abs(h - log2_u) < tol:
        return beta, True

    # Bracket: entropy decreases monotonically in beta.
    lo = 0.0
    hi = np.inf
    steps = 0
    if h > log2_u:
        lo = beta
        while steps < MAX_BISECTIONS:
            beta *= 2.0
            steps += 1
            h = _entropy_bits(shifted, beta, probs)
            if abs(h - log2_u) < tol:
                return beta, True
            if h < log2_u:
                hi = beta
                break
            lo = beta
    else:
        hi = beta
        while steps < MAX_BISECTIONS:
            beta *= 0.5
            steps += 1
            h = _entropy_bits(shifted, beta, probs)
            if abs(h - log2_u) < tol:
                return beta, True
            if h > log2_u:
                lo = beta
                break
            hi = beta
    if hi == np.inf or lo == 0.0:
        return beta, False

    for _ in range(MAX_BISECTIONS):
        beta = 0.5 * (lo + hi)
        h = _entropy_bits(shifted, beta, probs)
        if abs(h - log2_u) < tol:
            return beta, True
        if h > log2_u:
            lo = beta
        else:
            hi = beta
    return beta, False


@njit(cache=True, parallel=True)
def _calibrate_rows(sqd, log2_u, tol, betas, probs, reached):
    for i in prange(sqd.shape[0]):
        b, ok = _calibrate(sqd[i], log2_u, tol, probs[i])
        betas[i] = b
        reached[i] = ok


def _unreachable(u, k):
    return u > k


def find_sigma(neighbor_distances, u, tol=DEFAULT_TOL):
    """Calibrate the Gaussian precision ``beta = 1 / (2 sigma^2)`` of one object.

    Returns ``(beta, probs)`` where ``probs[j]`` is proportional to
    ``exp(-beta * d_j**2)`` and has perplexity ``u`` (to ``tol`` in log2
    space), or the best value reachable in the bisection budget.
    """
    d = np.asarray(neighbor_distances, dtype=np.float64)
    if d.ndim != 1 or d.size < 1:
        raise ValueError("need at least one neighbor distance")
    probs = np.empty(d.size)
    if _unreachable(u, d.size):
        warnings.warn(
            f"perplexity {u} exceeds the {d.size} available neighbors; "
            "using the uniform distribution",
            RuntimeWarning,
            stacklevel=2,
        )
        probs[:] = 1.0 / d.size
        return 0.0, probs
    beta, _ = _calibrate(d * d, np.log2(u), tol, probs)
    return beta, probs


def conditional_rows(distances, u, tol=DEFAULT_TOL):
    """Calibrate every row of an ``n x k`` distance matrix.

    Returns ``(betas, probs)``, each row of ``probs`` summing to one.
    """
    distances = np.ascontiguousarray(distances, dtype=np.float64)
    n, k = distances.shape
    probs = np.empty((n, k))
    betas = np.empty(n)
    if _unreachable(u, k):
        warnings.warn(
            f"perplexity {u} exceeds the {k} available neighbors; "
            "using uniform conditionals",
            RuntimeWarning,
            stacklevel=2,
        )
        probs[:] = 1.0 / k
        betas[:] = 0.0
        return betas, probs
    reached = np.empty(n, dtype=np.bool_)
    _calibrate_rows(distances * distances, np.log2(u), tol, betas, probs, reached)
    misses = int((~reached).sum())
    if misses:
        warnings.warn(
            f"perplexity {u} not reached within tolerance for {misses} objects",
            RuntimeWarning,
            stacklevel=2,
        )
    return betas, probs


@njit(cache=True, parallel=True)
def _pairwise_euclidean(X):
    n = X.shape[0]
    out = np.zeros((n, n))
    for i in prange(n):
        for j in range(n):
            if i != j:
                out[i, j] = euclidean(X[i], X[j])
    return out


def dense_p(X, u, tol=DEFAULT_TOL):
    """Exact joint affinities over all pairs, as a dense ``n x n`` array."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < 2:
        raise ValueError("need at least two objects")
    dist = _pairwise_euclidean(X)
    # Off-diagonal distances, row by row, in column order.
    mask = ~np.eye(n, dtype=bool)
    rows = dist[mask].reshape(n, n - 1)
    _, probs = conditional_rows(rows, u, tol)
    cond = np.zeros((n, n))
    cond[mask] = probs.ravel()
    return (cond + cond.T) / (2.0 * n)


def sparse_p_from_graph(neighbor_idx, neighbor_dist, u, tol=DEFAULT_TOL):
    """Sparse joint affinities from k-nearest-neighbor lists."""
    neighbor_idx = np.asarray(neighbor_idx, dtype=np.int64)
    n, k = neighbor_idx.shape
    _, probs = conditional_rows(neighbor_dist, u, tol)
    rows = np.repeat(np.arange(n), k)
    cond = sp.csr_matrix((probs.ravel(), (rows, neighbor_idx.ravel())), shape=(n, n))
    P = (cond + cond.T).tocsr()
    P.data /= 2.0 * n
    P.eliminate_zeros()
    P.sort_indices()
    return P


def sparse_p(X, u, k=None, metric=euclidean, seed=0, tol=DEFAULT_TOL):
    """Sparse joint affinities over the ``floor(3u)`` nearest neighbors."""
    if k is None:
        k = int(np.floor(3 * u))
    idx, dist = knn_graph(X, k, metric=metric, seed=seed)
    return sparse_p_from_graph(idx, dist, u, tol)


def exaggerate(P, alpha):
    if alpha < 1:
        raise ValueError(f"alpha must be >= 1, got {alpha}")
    return P * alpha


def unexaggerate(P, alpha):
    if alpha < 1:
        raise ValueError(f"alpha must be >= 1, got {alpha}")
    return P / alpha


def perplexity_bits(probs):
    """Entropy in bits of a probability vector (zero entries ignored)."""
    p = np.asarray(probs, dtype=np.float64)
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())

"""t-SNE gradients: the exact O(N^2) reference, the Barnes-Hut point-cell
approximation and the dual-tree cell-cell approximation.

Every path splits the gradient into attraction and repulsion::

    grad_i = 4 * (f_attr_i - f_repZ_i / Z)

with ``f_attr_i = sum_j p_ij w_ij (y_i - y_j)``, ``f_repZ_i = sum_j w_ij^2
(y_i - y_j)``, ``Z = sum_{k != l} w_kl`` and ``w_ij = 1 / (1 + |y_i - y_j|^2)``.
Only the repulsive pair (``f_repZ``, ``Z``) is approximated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from numba import njit, prange

from .spacetree import _summarizes, build_tree, condition_code

_BH_STACK = (64 + 2) * 8
# Reassociation lets the O(N^2) loops vectorize; results stay deterministic
# for a given build and never depend on the thread count.
_FASTMATH = {"reassoc", "contract", "nsz"}


class NumericalError(ArithmeticError):
    """A gradient or normalization became non-finite or non-positive."""


@dataclass
class GradientField:
    grad: np.ndarray
    z: float


@dataclass
class ForceSplit:
    f_attr: np.ndarray
    f_rep: np.ndarray
    z: float


# --------------------------------------------------------------------------
# attraction


@njit(cache=True, parallel=True, fastmath=_FASTMATH)
def _attractive_sparse(indptr, indices, values, Y, out):
    n, s = Y.shape
    x = Y[:, 0].copy()
    y = Y[:, 1].copy()
    z = Y[:, s - 1].copy()
    three = s == 3
    for i in prange(n):
        xi = x[i]
        yi = y[i]
        zi = z[i]
        ax = 0.0
        ay = 0.0
        az = 0.0
        if three:
            for t in range(indptr[i], indptr[i + 1]):
                j = indices[t]
                dx = xi - x[j]
                dy = yi - y[j]
                dz = zi - z[j]
                w = values[t] / (1.0 + dx * dx + dy * dy + dz * dz)
                ax += w * dx
                ay += w * dy
                az += w * dz
            out[i, 2] = az
        else:
            for t in range(indptr[i], indptr[i + 1]):
                j = indices[t]
                dx = xi - x[j]
                dy = yi - y[j]
                w = values[t] / (1.0 + dx * dx + dy * dy)
                ax += w * dx
                ay += w * dy
        out[i, 0] = ax
        out[i, 1] = ay


@njit(cache=True, parallel=True)
def _attractive_dense(P, Y, out):
    n, s = Y.shape
    for i in prange(n):
        for d in range(s):
            out[i, d] = 0.0
        for j in range(n):
            if j == i or P[i, j] == 0.0:
                continue
            d2 = 0.0
            for d in range(s):
                diff = Y[i, d] - Y[j, d]
                d2 += diff * diff
            w = P[i, j] / (1.0 + d2)
            for d in range(s):
                out[i, d] += w * (Y[i, d] - Y[j, d])


def attractive_forces(P, Y):
    """``f_attr`` over the nonzeros of a sparse (or every entry of a dense) P."""
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    out = np.empty_like(Y)
    if sp.issparse(P):
        if P.format != "csr":
            P = P.tocsr()
        _attractive_sparse(P.indptr, P.indices, P.data.astype(np.float64, copy=False),
                           Y, out)
    else:
        _attractive_dense(np.ascontiguousarray(P, dtype=np.float64), Y, out)
    return out


# --------------------------------------------------------------------------
# exact repulsion


@njit(cache=True, parallel=True, fastmath=_FASTMATH)
def _exact_repulsive(Y, frep, zrow):
    n, s = Y.shape
    x = Y[:, 0].copy()
    y = Y[:, 1].copy()
    zc = Y[:, s - 1].copy()
    for i in prange(n):
        xi = x[i]
        yi = y[i]
        zi = zc[i]
        ax = 0.0
        ay = 0.0
        az = 0.0
        z = 0.0
        # The self term has w == 1 and zero displacement; it is removed from
        # z afterwards so the inner loops stay branch-free.
        if s == 2:
            for j in range(n):
                dx = xi - x[j]
                dy = yi - y[j]
                w = 1.0 / (1.0 + dx * dx + dy * dy)
                z += w
                ww = w * w
                ax += ww * dx
                ay += ww * dy
        else:
            for j in range(n):
                dx = xi - x[j]
                dy = yi - y[j]
                dz = zi - zc[j]
                w = 1.0 / (1.0 + dx * dx + dy * dy + dz * dz)
                z += w
                ww = w * w
                ax += ww * dx
                ay += ww * dy
                az += ww * dz
        frep[i, 0] = ax
        frep[i, 1] = ay
        if s == 3:
            frep[i, 2] = az
        zrow[i] = z - 1.0


def exact_repulsive(Y):
    """Exact ``(f_repZ, Z)`` by direct summation over all pairs."""
    Y = _as_embedding(Y)
    frep = np.empty_like(Y)
    zrow = np.empty(Y.shape[0])
    _exact_repulsive(Y, frep, zrow)
    return frep, _checked_z(zrow.sum())


def exact_z(Y):
    _, z = exact_repulsive(Y)
    return z


def _as_embedding(Y):
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[1] not in (2, 3):
        raise ValueError(f"embedding must be n x 2 or n x 3, got shape {Y.shape}")
    return Y


def _checked_z(z):
    z = float(z)
    if not z > 0 or not np.isfinite(z):
        raise NumericalError(f"normalization Z={z} is not a positive finite number")
    return z


@njit(cache=True)
def _tree_order(Y, perm):
    n, s = Y.shape
    out = np.empty((3, n))
    for t in range(n):
        p = perm[t]
        out[0, t] = Y[p, 0]
        out[1, t] = Y[p, 1]
        out[2, t] = Y[p, s - 1] if s == 3 else 0.0
    return out


# --------------------------------------------------------------------------
# Barnes-Hut repulsion


@njit(cache=True, parallel=True, fastmath=_FASTMATH)
def _bh_repulsive(Y, com, count, first_child, n_children, start, end, perm, diag,
                  theta, condition, frep, zrow):
    n, s = Y.shape
    # Points in tree order: leaf payloads are contiguous and consecutive
    # targets walk similar paths.
    pts = _tree_order(Y, perm)
    x = pts[0]
    y = pts[1]
    zc = pts[2]
    cx = com[:, 0].copy()
    cy = com[:, 1].copy()
    cz = com[:, s - 1].copy()
    three = s == 3
    for ti in prange(n):
        stack = np.empty(_BH_STACK, dtype=np.int64)
        xi = x[ti]
        yi = y[ti]
        zi = zc[ti]
        ax = 0.0
        ay = 0.0
        az = 0.0
        z = 0.0
        top = 1
        stack[0] = 0
        while top > 0:
            top -= 1
            v = stack[top]
            if n_children[v] == 0:
                for t in range(start[v], end[v]):
                    if t == ti:
                        continue
                    dx = xi - x[t]
                    dy = yi - y[t]
                    d2 = dx * dx + dy * dy
                    dz = 0.0
                    if three:
                        dz = zi - zc[t]
                        d2 += dz * dz
                    w = 1.0 / (1.0 + d2)
                    z += w
                    ww = w * w
                    ax += ww * dx
                    ay += ww * dy
                    az += ww * dz
                continue
            dx = xi - cx[v]
            dy = yi - cy[v]
            d2 = dx * dx + dy * dy
            dz = 0.0
            if three:
                dz = zi - cz[v]
                d2 += dz * dz
            # A cell holding the target itself is never summarized.
            outside = ti < start[v] or ti >= end[v]
            if outside and _summarizes(diag[v], d2, theta, condition):
                w = 1.0 / (1.0 + d2)
                m = count[v] * w
                z += m
                mw = m * w
                ax += mw * dx
                ay += mw * dy
                az += mw * dz
            else:
                # Single-point children are evaluated on the spot; others are
                # pushed in reverse so they pop in quadrant order.
                f = first_child[v]
                for c in range(f + n_children[v] - 1, f - 1, -1):
                    if count[c] == 1 and n_children[c] == 0:
                        t = start[c]
                        if t == ti:
                            continue
                        dx = xi - x[t]
                        dy = yi - y[t]
                        d2 = dx * dx + dy * dy
                        dz = 0.0
                        if three:
                            dz = zi - zc[t]
                            d2 += dz * dz
                        w = 1.0 / (1.0 + d2)
                        z += w
                        ww = w * w
                        ax += ww * dx
                        ay += ww * dy
                        az += ww * dz
                    else:
                        stack[top] = c
                        top += 1
        i = perm[ti]
        frep[i, 0] = ax
        frep[i, 1] = ay
        if three:
            frep[i, 2] = az
        zrow[i] = z


def bh_repulsive(Y, tree, theta, condition="standard"):
    """Barnes-Hut estimate of ``(f_repZ, Z)``; ``theta = 0`` is exact."""
    if theta < 0:
        raise ValueError("theta must be >= 0")
    Y = _as_embedding(Y)
    frep = np.empty_like(Y)
    zrow = np.empty(Y.shape[0])
    _bh_repulsive(Y, tree.com, tree.count, tree.first_child, tree.n_children,
                  tree.start, tree.end, tree.perm, tree.diagonal,
                  float(theta), condition_code(condition), frep, zrow)
    return frep, _checked_z(zrow.sum())


# --------------------------------------------------------------------------
# dual-tree repulsion


@njit(cache=True, fastmath=_FASTMATH)
def _pair_exact(pts, s, a_lo, a_hi, b_lo, b_hi, same, frep, with_forces):
    """Direct interactions between two tree-order slices (or within one)."""
    z = 0.0
    for p in range(a_lo, a_hi):
        q0 = p + 1 if same else b_lo
        for q in range(q0, b_hi):
            d2 = 0.0
            for d in range(s):
                diff = pts[d, p] - pts[d, q]
                d2 += diff * diff
            w = 1.0 / (1.0 + d2)
            z += 2.0 * w
            if with_forces:
                ww = w * w
                for d in range(s):
                    f = ww * (pts[d, p] - pts[d, q])
                    frep[d, p] += f
                    frep[d, q] -= f
    return z


@njit(cache=True, fastmath=_FASTMATH)
def _dual_repulsive(Y, com, count, first_child, n_children, start, end, perm, diag,
                    rho, condition, frep, with_forces):
    n, s = Y.shape
    pts = _tree_order(Y, perm)
    # Forces accumulate in tree order and are scattered back at the end.
    fsorted = np.zeros((3, n))
    cap = 4096
    sa = np.empty(cap, dtype=np.int64)
    sb = np.empty(cap, dtype=np.int64)
    sa[0] = 0
    sb[0] = 0
    top = 1
    z = 0.0
    while top > 0:
        top -= 1
        a = sa[top]
        b = sb[top]
        if a == b:
            if n_children[a] == 0:
                z += _pair_exact(pts, s, start[a], end[a], start[a], end[a], True,
                                 fsorted, with_forces)
                continue
            k = n_children[a]
            need = k * (k + 1) // 2
        else:
            d2 = 0.0
            for d in range(s):
                diff = com[a, d] - com[b, d]
                d2 += diff * diff
            size = diag[a] if diag[a] > diag[b] else diag[b]
            if _summarizes(size, d2, rho, condition):
                w = 1.0 / (1.0 + d2)
                z += 2.0 * count[a] * count[b] * w
                if with_forces:
                    ww = w * w
                    for d in range(s):
                        diff = com[a, d] - com[b, d]
                        fa = count[b] * ww * diff
                        fb = count[a] * ww * diff
                        for t in range(start[a], end[a]):
                            fsorted[d, t] += fa
                        for t in range(start[b], end[b]):
                            fsorted[d, t] -= fb
                continue
            if n_children[a] == 0 and n_children[b] == 0:
                z += _pair_exact(pts, s, start[a], end[a], start[b], end[b], False,
                                 fsorted, with_forces)
                continue
            need = 8
        if top + need > cap:
            cap = 2 * (top + need)
            na = np.empty(cap, dtype=np.int64)
            nb = np.empty(cap, dtype=np.int64)
            na[:top] = sa[:top]
            nb[:top] = sb[:top]
            sa = na
            sb = nb
        if a == b:
            # Self pairs are always opened: all unordered child pairs.
            f = first_child[a]
            k = n_children[a]
            for c1 in range(f + k - 1, f - 1, -1):
                for c2 in range(f + k - 1, c1 - 1, -1):
                    sa[top] = c1
                    sb[top] = c2
                    top += 1
            continue
        # Open the larger cell; a leaf can only be paired with the other's children.
        split_a = n_children[a] > 0 and (n_children[b] == 0 or diag[a] >= diag[b])
        if split_a:
            f = first_child[a]
            for c in range(f + n_children[a] - 1, f - 1, -1):
                sa[top] = c
                sb[top] = b
                top += 1
        else:
            f = first_child[b]
            for c in range(f + n_children[b] - 1, f - 1, -1):
                sa[top] = a
                sb[top] = c
                top += 1
    if with_forces:
        for t in range(n):
            for d in range(s):
                frep[perm[t], d] = fsorted[d, t]
    return z


def dual_tree_repulsive(Y, tree, rho, condition="standard"):
    """Dual-tree estimate of ``(f_repZ, Z)``; ``rho = 0`` is exact."""
    if rho < 0:
        raise ValueError("rho must be >= 0")
    Y = _as_embedding(Y)
    frep = np.zeros_like(Y)
    z = _dual_repulsive(Y, tree.com, tree.count, tree.first_child, tree.n_children,
                        tree.start, tree.end, tree.perm, tree.diagonal,
                        float(rho), condition_code(condition), frep, True)
    return frep, _checked_z(z)


def dual_tree_z(Y, tree, rho, condition="standard"):
    """Dual-tree estimate of Z alone (no per-point forces)."""
    if rho < 0:
        raise ValueError("rho must be >= 0")
    Y = _as_embedding(Y)
    frep = np.zeros_like(Y)
    z = _dual_repulsive(Y, tree.com, tree.count, tree.first_child, tree.n_children,
                        tree.start, tree.end, tree.perm, tree.diagonal,
                        float(rho), condition_code(condition), frep, False)
    return _checked_z(z)


# --------------------------------------------------------------------------
# full gradients


def _combine(f_attr, frep, z):
    grad = 4.0 * (f_attr - frep / z)
    return GradientField(grad, z)


def exact_force_split(P, Y):
    f_attr = attractive_forces(P, Y)
    frep, z = exact_repulsive(Y)
    return ForceSplit(f_attr, frep / z, z)


def exact_gradient(P, Y):
    """Reference gradient by direct O(N^2) summation; P dense or sparse."""
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    if Y.shape[0] < 2:
        raise ValueError("need at least two points")
    frep, z = exact_repulsive(Y)
    return _combine(attractive_forces(P, Y), frep, z)


def bh_gradient(P, Y, theta=0.5, condition="standard", tree=None):
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    if tree is None:
        tree = build_tree(Y)
    frep, z = bh_repulsive(Y, tree, theta, condition)
    return _combine(attractive_forces(P, Y), frep, z)


def dual_gradient(P, Y, rho=0.25, condition="standard", tree=None):
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    if tree is None:
        tree = build_tree(Y)
    frep, z = dual_tree_repulsive(Y, tree, rho, condition)
    return _combine(attractive_forces(P, Y), frep, z)


def gradient(P, Y, algorithm="bh", theta=0.5, rho=0.25, condition="standard"):
    """Dispatch on ``algorithm`` in {'exact', 'bh', 'dual'}.

    A zero trade-off parameter summarizes nothing, so it runs the exact
    kernel: the traversals agree with it to rounding, but optimizer runs only
    reproduce each other bit for bit when the arithmetic is identical.
    """
    if algorithm == "exact" or (algorithm == "bh" and theta == 0) or \
            (algorithm == "dual" and rho == 0):
        return exact_gradient(P, Y)
    if algorithm == "bh":
        return bh_gradient(P, Y, theta, condition)
    if algorithm == "dual":
        return dual_gradient(P, Y, rho, condition)
    raise ValueError(f"unknown algorithm {algorithm!r}")


# --------------------------------------------------------------------------
# cost


def _pairs(P):
    """Row, column and value arrays of the positive off-diagonal entries of P."""
    if sp.issparse(P):
        coo = sp.coo_matrix(P)
        rows, cols, vals = coo.row, coo.col, coo.data
    else:
        P = np.asarray(P, dtype=np.float64)
        rows, cols = np.nonzero(P)
        vals = P[rows, cols]
    keep = (vals > 0) & (rows != cols)
    return rows[keep], cols[keep], vals[keep]


def kl_from_z(P, Y, z):
    """KL(P || Q) for a given normalization ``Z`` of the Student-t kernel."""
    rows, cols, vals = _pairs(P)
    diff = Y[rows] - Y[cols]
    log_w = -np.log1p(np.einsum("ij,ij->i", diff, diff))
    return float(np.sum(vals * (np.log(vals) - log_w)) + vals.sum() * np.log(z))


def approx_kl_cost(P, Y, tree=None, trade_off=0.25, method="dual", condition="standard"):
    """KL cost with a tree-estimated Z; the parameter 0 gives the exact cost."""
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    if tree is None:
        tree = build_tree(Y)
    if method == "dual":
        z = dual_tree_z(Y, tree, trade_off, condition)
    elif method == "bh":
        _, z = bh_repulsive(Y, tree, trade_off, condition)
    else:
        raise ValueError(f"unknown method {method!r}")
    return kl_from_z(P, Y, z)

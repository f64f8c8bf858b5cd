"""PCA reduction applied before the affinity computation."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

# Above this input dimensionality the full covariance eigendecomposition is
# replaced by a randomized range finder.
RANDOMIZED_ABOVE = 4096


@dataclass
class PcaModel:
    mean: np.ndarray
    basis: np.ndarray  # D x k, orthonormal columns
    explained_variance: np.ndarray  # length k, non-increasing

    @property
    def is_identity(self):
        d, k = self.basis.shape
        return d == k and not self.mean.any() and np.array_equal(self.basis, np.eye(d))

    def transform(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) @ self.basis


def _fix_signs(basis):
    # Largest-magnitude entry of each component is made positive.
    idx = np.argmax(np.abs(basis), axis=0)
    signs = np.sign(basis[idx, np.arange(basis.shape[1])])
    signs[signs == 0] = 1.0
    return basis * signs


def _top_eigh(cov, k):
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:k]
    return evals[order], evecs[:, order]


def _randomized_top(Xc, k, seed, oversample=10, power_iters=2):
    """Top-k right singular directions of Xc by randomized range finding."""
    rng = np.random.default_rng(seed)
    n, d = Xc.shape
    width = min(k + oversample, d)
    Q = np.linalg.qr(Xc @ rng.standard_normal((d, width)))[0]
    for _ in range(power_iters):
        Q = np.linalg.qr(Xc.T @ Q)[0]
        Q = np.linalg.qr(Xc @ Q)[0]
    # Project onto the found range and solve the small problem exactly.
    B = Q.T @ Xc  # width x d
    small_cov = (B @ B.T) / max(n - 1, 1)
    evals, U = _top_eigh(small_cov, k)
    evals = np.clip(evals, 0.0, None)
    directions = B.T @ U
    norms = np.linalg.norm(directions, axis=0)
    norms[norms == 0] = 1.0
    return evals, directions / norms


def pca_reduce(X, target_dims, seed=0):
    """Project ``X`` onto its top ``target_dims`` principal components.

    Inputs with ``d <= target_dims`` are returned unchanged together with an
    identity model. Components are not rescaled (no whitening).
    """
    if target_dims < 1:
        raise ValueError(f"target_dims must be >= 1, got {target_dims}")
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if d <= target_dims:
        model = PcaModel(np.zeros(d), np.eye(d), np.zeros(0))
        return X, model

    mean = X.mean(axis=0)
    Xc = X - mean
    if not np.any(Xc):
        warnings.warn(
            "PCA input has zero variance; returning a zero-variance projection",
            RuntimeWarning,
            stacklevel=2,
        )
        basis = np.eye(d)[:, :target_dims]
        return np.zeros((n, target_dims)), PcaModel(mean, basis, np.zeros(target_dims))

    if d > RANDOMIZED_ABOVE:
        evals, basis = _randomized_top(Xc, target_dims, seed)
    else:
        cov = (Xc.T @ Xc) / max(n - 1, 1)
        evals, basis = _top_eigh(cov, target_dims)
        evals = np.clip(evals, 0.0, None)
    basis = _fix_signs(basis)
    return Xc @ basis, PcaModel(mean, basis, evals)

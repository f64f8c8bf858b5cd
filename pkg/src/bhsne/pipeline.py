"""The full embedding pipeline: PCA, sparse affinities, optimization."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .affinity import sparse_p
from .ingest import RunConfig
from .optimizer import run
from .preprocess import pca_reduce


@dataclass
class EmbedResult:
    Y: np.ndarray
    P: object
    history: list
    seconds: float


def affinities(X, config):
    """PCA (when enabled) followed by the sparse floor(3u)-neighbor affinities."""
    if config.pca_target:
        X, _ = pca_reduce(X, config.pca_target, seed=config.seed)
    k = min(int(np.floor(3 * config.perplexity)), X.shape[0] - 1)
    return sparse_p(X, config.perplexity, k=k, seed=config.seed)


def embed(X, config=None, callback=None):
    """Embed the rows of ``X``; returns an EmbedResult with wall time."""
    if config is None:
        config = RunConfig()
    t0 = time.perf_counter()
    P = affinities(X, config)
    Y, history = run(P, config, callback=callback)
    return EmbedResult(Y, P, history, time.perf_counter() - t0)

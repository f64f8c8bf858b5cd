"""Barnes-Hut t-SNE."""

import numba

# The TBB layer shipped here is too old for numba; OpenMP is always present.
numba.config.THREADING_LAYER = "omp"

from .affinity import dense_p, exaggerate, find_sigma, sparse_p, unexaggerate  # noqa: E402
from .gradient import (  # noqa: E402
    GradientField,
    NumericalError,
    approx_kl_cost,
    bh_gradient,
    dual_gradient,
    exact_gradient,
)
from .ingest import RunConfig  # noqa: E402
from .metrics import kl_cost, knn_error  # noqa: E402
from .optimizer import initialize, run  # noqa: E402
from .pipeline import embed  # noqa: E402

__all__ = [
    "GradientField",
    "NumericalError",
    "RunConfig",
    "approx_kl_cost",
    "bh_gradient",
    "dense_p",
    "dual_gradient",
    "embed",
    "exact_gradient",
    "exaggerate",
    "find_sigma",
    "initialize",
    "kl_cost",
    "knn_error",
    "run",
    "sparse_p",
    "unexaggerate",
]

"""Gradient descent with momentum, adaptive gains and early exaggeration."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .affinity import exaggerate
from .gradient import NumericalError, approx_kl_cost, gradient
from .ingest import RunConfig
from .metrics import kl_cost

log = logging.getLogger(__name__)

MIN_GAIN = 0.01
GAIN_INCREMENT = 0.2
GAIN_DECAY = 0.8
INIT_VARIANCE = 1e-4
EXACT_COST_MAX_N = 10000


def initialize(n, s=2, seed=0):
    """i.i.d. Gaussian coordinates with variance 1e-4."""
    if n < 2:
        raise ValueError("need at least two points")
    if s not in (2, 3):
        raise ValueError("embedding dimensionality must be 2 or 3")
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, s)) * np.sqrt(INIT_VARIANCE)


@dataclass
class IterationRecord:
    iteration: int
    cost: float  # NaN between checkpoints
    grad_norm: float
    elapsed: float


@dataclass
class OptimizerState:
    Y: np.ndarray
    velocity: np.ndarray
    gains: np.ndarray
    iteration: int = 0
    history: list = field(default_factory=list)

    @classmethod
    def start(cls, Y):
        Y = np.array(Y, dtype=np.float64)
        return cls(Y, np.zeros_like(Y), np.ones_like(Y))


def momentum_at(iteration, config):
    if iteration < config.momentum_switch_iter:
        return config.momentum_early
    return config.momentum_late


def step(state, grad, config):
    """One update; mutates and returns ``state``."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != state.Y.shape:
        raise ValueError(f"gradient shape {grad.shape} != embedding shape {state.Y.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericalError(f"non-finite gradient at iteration {state.iteration}")

    flip = np.sign(grad) != np.sign(state.velocity)
    state.gains = np.where(flip, state.gains + GAIN_INCREMENT, state.gains * GAIN_DECAY)
    np.maximum(state.gains, MIN_GAIN, out=state.gains)

    state.velocity = (momentum_at(state.iteration, config) * state.velocity
                      - config.eta * state.gains * grad)
    state.Y = state.Y + state.velocity
    state.iteration += 1
    return state


def evaluate_cost(P, Y, config):
    if Y.shape[0] <= EXACT_COST_MAX_N:
        return kl_cost(P, Y)
    return approx_kl_cost(P, Y, trade_off=config.rho, method="dual",
                          condition=config.condition)


def run(P, config=None, Y0=None, callback=None):
    """Optimize an embedding for ``config.iterations`` steps.

    Returns ``(Y, history)``. ``P`` is the (unexaggerated) joint affinity
    matrix, sparse or dense. The cost is logged every ``config.cost_every``
    iterations and at the last one; ``callback(state)`` runs after each step.
    """
    if config is None:
        config = RunConfig()
    n = P.shape[0]
    if Y0 is None:
        Y0 = initialize(n, config.dims, config.seed)
    state = OptimizerState.start(Y0)

    exaggerated = exaggerate(P, config.alpha) if config.exaggeration_iters > 0 else P
    t0 = time.perf_counter()
    for it in range(config.iterations):
        P_used = exaggerated if it < config.exaggeration_iters else P
        field_ = gradient(P_used, state.Y, config.algorithm, config.theta, config.rho,
                          config.condition)
        step(state, field_.grad, config)

        cost = float("nan")
        last = it == config.iterations - 1
        if (it + 1) % config.cost_every == 0 or last:
            cost = evaluate_cost(P, state.Y, config)
            log.info("iteration %d: cost %.6f, %.2f s", it + 1, cost,
                     time.perf_counter() - t0)
        state.history.append(IterationRecord(
            it, cost, float(np.linalg.norm(field_.grad)), time.perf_counter() - t0))
        if callback is not None:
            callback(state)
    return state.Y, state.history

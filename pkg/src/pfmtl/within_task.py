"""Biased parameter-free learner: w = p * v + theta.

The magnitude p is learned by KT coin betting on <g, v>, the direction v by
projected subgradient descent on the unit ball; both see the same
subgradient g computed at the current iterate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import (
    Ball,
    BetState,
    DirectionState,
    ParameterError,
    bet_init,
    bet_step,
    direction_init,
    direction_step,
)
from .losses import LossSpec, check_input_bound, full_subgradient


@dataclass(frozen=True, slots=True)
class WithinTaskLearner:
    theta: np.ndarray
    magnitude: BetState
    direction: DirectionState
    i: int
    L: float
    R: float

    @property
    def weights(self) -> np.ndarray:
        return self.magnitude.bet * self.direction.v + self.theta

    @property
    def e(self) -> float:
        return self.magnitude.eps


def wt_init(theta, e: float, L: float, R: float) -> WithinTaskLearner:
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1 or theta.shape[0] < 1:
        raise ParameterError("theta must be a non-empty vector")
    if not (L > 0 and R > 0):
        raise ParameterError(f"L and R must be > 0, got L={L}, R={R}")
    C = L * R
    d = theta.shape[0]
    return WithinTaskLearner(
        theta=theta,
        magnitude=bet_init(e, C),
        direction=direction_init(Ball.unit(d), C, d),
        i=1,
        L=float(L),
        R=float(R),
    )


def with_bias(learner: WithinTaskLearner, theta) -> WithinTaskLearner:
    """Same sub-learner states, different translation."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != learner.theta.shape:
        raise ParameterError(f"bias shape {theta.shape} != {learner.theta.shape}")
    return replace(learner, theta=theta)


def wt_predict(learner: WithinTaskLearner, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != learner.theta.shape:
        raise ParameterError(f"dimension mismatch: x {x.shape} vs {learner.theta.shape}")
    return float(x @ learner.weights)


def wt_update(learner: WithinTaskLearner, g) -> WithinTaskLearner:
    """Advance both sub-learners with the subgradient ``g`` taken at the current iterate."""
    g = np.asarray(g, dtype=float)
    scalar = float(g @ learner.direction.v)
    return replace(
        learner,
        magnitude=bet_step(learner.magnitude, scalar),
        direction=direction_step(learner.direction, g),
        i=learner.i + 1,
    )


def wt_observe(learner: WithinTaskLearner, x, y: float, loss: LossSpec) -> tuple[float, WithinTaskLearner]:
    """Incur the loss at the current iterate, then update. Returns (loss, new learner)."""
    x = np.asarray(x, dtype=float)
    check_input_bound(x, learner.R)
    w = learner.weights
    incurred = loss.evaluate(float(x @ w), float(y))
    g = full_subgradient(loss, x, y, w)
    return incurred, wt_update(learner, g)


@dataclass(frozen=True)
class WithinTaskRun:
    """Per-step trace of one task. Row i holds the quantities in force at step i."""

    iterates: np.ndarray
    losses: np.ndarray
    gradients: np.ndarray
    bets: np.ndarray
    directions: np.ndarray

    @property
    def average_iterate(self) -> np.ndarray:
        return self.iterates.mean(axis=0)


def run_within_task(theta, X, y, loss: LossSpec, e: float, L: float, R: float) -> WithinTaskRun:
    X = np.asarray(X, dtype=float)
    learner = wt_init(theta, e, L, R)
    n, d = X.shape
    iterates = np.empty((n, d))
    grads = np.empty((n, d))
    dirs = np.empty((n, d))
    bets = np.empty(n)
    losses = np.empty(n)
    for j in range(n):
        iterates[j] = learner.weights
        bets[j] = learner.magnitude.bet
        dirs[j] = learner.direction.v
        check_input_bound(X[j], R)
        losses[j] = loss.evaluate(float(X[j] @ iterates[j]), float(y[j]))
        grads[j] = full_subgradient(loss, X[j], y[j], iterates[j])
        learner = wt_update(learner, grads[j])
    return WithinTaskRun(iterates, losses, grads, bets, dirs)


def translated_ogd_run(theta, gamma: float, X, y, loss: LossSpec) -> np.ndarray:
    """Literal translated recurrence: w_1 = 0, w_i = w_{i-1} - gamma g_{i-1} + theta.

    Note the bias is added at every step, so with zero gradients w_i = (i-1) theta.
    """
    return _ogd(np.zeros_like(np.asarray(theta, dtype=float)), np.asarray(theta, dtype=float), gamma, X, y, loss)


def ogd_from(start, gamma: float, X, y, loss: LossSpec) -> np.ndarray:
    """Constant-step online subgradient descent initialised at ``start``."""
    start = np.asarray(start, dtype=float)
    return _ogd(start, np.zeros_like(start), gamma, X, y, loss)


def shifted_ogd_run(theta, gamma: float, X, y, loss: LossSpec) -> np.ndarray:
    """OGD run in coordinates centred at theta: w_i = theta + u_i with u_1 = 0."""
    theta = np.asarray(theta, dtype=float)
    X = np.asarray(X, dtype=float)
    u = np.zeros_like(theta)
    out = np.empty((X.shape[0], theta.shape[0]))
    for j in range(X.shape[0]):
        out[j] = theta + u
        u = u - gamma * full_subgradient(loss, X[j], y[j], out[j])
    return out


def _ogd(w1, shift, gamma, X, y, loss):
    if not gamma > 0:
        raise ParameterError(f"step size must be > 0, got {gamma}")
    X = np.asarray(X, dtype=float)
    out = np.empty((X.shape[0], w1.shape[0]))
    w = w1
    for j in range(X.shape[0]):
        out[j] = w
        w = w - gamma * full_subgradient(loss, X[j], y[j], w) + shift
    return out


def step_size(i: int, L: float, R: float) -> float:
    """Within-task direction step (1/(LR)) sqrt(2/i)."""
    return math.sqrt(2.0 / i) / (L * R)

"""Convex Lipschitz losses of a scalar prediction."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import SCALE_RTOL, ParameterError


class InputBoundViolation(ValueError):
    """An input vector lies outside the declared ball B(0, R)."""


@dataclass(frozen=True)
class LossSpec:
    name: str
    lipschitz: float
    evaluate: Callable[[float, float], float]
    scalar_subgradient: Callable[[float, float], float]
    # optional vectorised evaluation over arrays of predictions/labels
    batch_evaluate: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None


def _abs_eval(yhat: float, y: float) -> float:
    return abs(yhat - y)


def _abs_subgrad(yhat: float, y: float) -> float:
    # zero at the kink
    if yhat > y:
        return 1.0
    if yhat < y:
        return -1.0
    return 0.0


def abs_loss() -> LossSpec:
    return LossSpec("absolute", 1.0, _abs_eval, _abs_subgrad, lambda p, y: np.abs(p - y))


def full_subgradient(loss: LossSpec, x, y: float, w) -> np.ndarray:
    """Subgradient of w -> loss(<x, w>, y), i.e. s * x."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    if x.shape != w.shape:
        raise ParameterError(f"dimension mismatch: x {x.shape} vs w {w.shape}")
    s = loss.scalar_subgradient(float(x @ w), float(y))
    return s * x


def check_input_bound(x, R: float) -> None:
    norm = float(np.linalg.norm(x))
    if norm > R * (1.0 + SCALE_RTOL):
        raise InputBoundViolation(f"||x||={norm!r} exceeds input bound R={R!r}")


def mean_loss(loss: LossSpec, X: np.ndarray, y: np.ndarray, w) -> float:
    """Average loss of the linear predictor ``w`` on rows of ``X``."""
    preds = np.asarray(X, dtype=float) @ np.asarray(w, dtype=float)
    if loss.batch_evaluate is not None:
        return float(np.mean(loss.batch_evaluate(preds, np.asarray(y, dtype=float))))
    return float(np.mean([loss.evaluate(p, t) for p, t in zip(preds, y)]))

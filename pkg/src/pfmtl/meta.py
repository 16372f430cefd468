"""Bias meta-learners sharing one runner interface.

aggressive  bias re-estimated after every datapoint (global counter k)
lazy        bias re-estimated once per task from the summed task gradient
itl         bias frozen at 0
fixed       bias frozen at a supplied vector
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable

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
from .evaluation import RunLedger, StepRecord
from .losses import LossSpec, check_input_bound, full_subgradient
from .within_task import WithinTaskLearner, wt_init, wt_update, with_bias

VARIANTS = ("aggressive", "lazy", "itl", "fixed")


class ProtocolError(RuntimeError):
    """Observation/task-boundary calls made out of order."""


@dataclass(frozen=True, slots=True)
class MetaLearner:
    variant: str
    meta_magnitude: BetState
    meta_direction: DirectionState
    inner: WithinTaskLearner
    k: int  # global datapoint counter
    t: int  # task counter
    i: int  # points observed in the current task
    n: int | None
    e: float
    L: float
    R: float
    lazy_sum: np.ndarray
    fixed_theta: np.ndarray

    @property
    def bias(self) -> np.ndarray:
        """Bias the meta states currently encode (P * V), or the frozen one."""
        if self.variant in ("aggressive", "lazy"):
            return self.meta_magnitude.bet * self.meta_direction.v
        return self.fixed_theta

    @property
    def dim(self) -> int:
        return self.lazy_sum.shape[0]


def meta_init(
    variant: str,
    e: float,
    E: float,
    L: float,
    R: float,
    n: int | None,
    dim: int,
    theta=None,
) -> MetaLearner:
    if variant not in VARIANTS:
        raise ParameterError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if dim < 1:
        raise ParameterError(f"dim must be >= 1, got {dim}")
    if variant in ("aggressive", "lazy") and (n is None or n < 1):
        raise ParameterError(f"{variant} needs a fixed per-task size n >= 1")
    if n is not None and n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    if not (L > 0 and R > 0):
        raise ParameterError(f"L and R must be > 0, got L={L}, R={R}")
    if variant == "fixed":
        if theta is None:
            raise ParameterError("fixed variant needs a bias vector")
        fixed = np.asarray(theta, dtype=float)
        if fixed.shape != (dim,):
            raise ParameterError(f"fixed bias shape {fixed.shape} != ({dim},)")
    else:
        fixed = np.zeros(dim)
    C = L * R * n if variant == "lazy" else L * R
    meta_magnitude = bet_init(E, C)
    meta_direction = direction_init(Ball.unit(dim), C, dim)
    start = fixed if variant == "fixed" else np.zeros(dim)
    return MetaLearner(
        variant=variant,
        meta_magnitude=meta_magnitude,
        meta_direction=meta_direction,
        inner=wt_init(start, e, L, R),
        k=1,
        t=1,
        i=0,
        n=n,
        e=float(e),
        L=float(L),
        R=float(R),
        lazy_sum=np.zeros(dim),
        fixed_theta=fixed,
    )


def meta_observe(m: MetaLearner, x, y: float, loss: LossSpec) -> tuple[StepRecord, MetaLearner]:
    """Process one datapoint of the current task."""
    if m.n is not None and m.i >= m.n:
        raise ProtocolError(f"task {m.t} already received n={m.n} points; call meta_end_task")
    x = np.asarray(x, dtype=float)
    if x.shape != (m.dim,):
        raise ParameterError(f"dimension mismatch: x {x.shape} vs ({m.dim},)")
    check_input_bound(x, m.R)

    inner = m.inner
    if m.variant == "aggressive":
        inner = with_bias(inner, m.bias)
    w = inner.weights
    incurred = loss.evaluate(float(x @ w), float(y))
    g = full_subgradient(loss, x, y, w)

    record = StepRecord(
        t=m.t,
        i=m.i + 1,
        k=m.k,
        loss=incurred,
        linear=float(g @ w),
        iterate=w,
        bias=inner.theta,
        gradient=g,
        x=x,
        y=float(y),
        inner_bet=inner.magnitude.bet,
        inner_direction=inner.direction.v,
        meta_bet=m.meta_magnitude.bet,
        meta_direction=m.meta_direction.v,
    )

    meta_magnitude, meta_direction, lazy_sum = m.meta_magnitude, m.meta_direction, m.lazy_sum
    if m.variant == "aggressive":
        meta_magnitude = bet_step(meta_magnitude, float(g @ meta_direction.v))
        meta_direction = direction_step(meta_direction, g)
    elif m.variant == "lazy":
        lazy_sum = lazy_sum + g

    new = replace(
        m,
        meta_magnitude=meta_magnitude,
        meta_direction=meta_direction,
        inner=wt_update(inner, g),
        k=m.k + 1,
        i=m.i + 1,
        lazy_sum=lazy_sum,
    )
    return record, new


def meta_end_task(m: MetaLearner) -> MetaLearner:
    """Close the current task: lazy meta update, then a fresh inner learner."""
    if m.i == 0 or (m.n is not None and m.i != m.n):
        raise ProtocolError(f"task {m.t} closed after {m.i} points, expected {m.n}")
    meta_magnitude, meta_direction = m.meta_magnitude, m.meta_direction
    if m.variant == "lazy":
        G = m.lazy_sum
        meta_magnitude = bet_step(meta_magnitude, float(G @ meta_direction.v))
        meta_direction = direction_step(meta_direction, G)
    new = replace(
        m,
        meta_magnitude=meta_magnitude,
        meta_direction=meta_direction,
        t=m.t + 1,
        i=0,
        lazy_sum=np.zeros(m.dim),
    )
    return replace(new, inner=wt_init(new.bias, m.e, m.L, m.R))


def run_tasks(
    m: MetaLearner,
    tasks: Iterable[tuple[np.ndarray, np.ndarray]],
    loss: LossSpec,
) -> tuple[RunLedger, MetaLearner]:
    """Stream (X, y) task datasets through ``m`` and record every step."""
    records = []
    for X, y in tasks:
        X = np.asarray(X, dtype=float)
        for x_row, y_val in zip(X, y):
            rec, m = meta_observe(m, x_row, y_val, loss)
            records.append(rec)
        m = meta_end_task(m)
    return RunLedger.from_records(m.variant, records), m


def collect_biases(m: MetaLearner, ledger: RunLedger) -> np.ndarray:
    """Per-step biases for the aggressive learner, per-task biases otherwise."""
    if m.variant == "aggressive":
        return ledger.biases.copy()
    return ledger.task_biases()


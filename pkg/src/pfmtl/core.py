"""Scalar KT coin betting, projected online subgradient on Euclidean balls.

Both learners are immutable state machines: every ``*_step`` returns a new
state and leaves its argument untouched.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Relative slack when checking |g| <= C; inner products of bounded vectors
# can overshoot the analytic bound by a few ulps.
SCALE_RTOL = 1e-12


class ParameterError(ValueError):
    """Invalid construction parameter (non-positive scale, bad dimension...)."""


class ScaleViolation(ValueError):
    """An incoming outcome/gradient exceeds the declared Lipschitz scale."""


@dataclass(frozen=True, slots=True)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float)
        if center.ndim != 1:
            raise ParameterError("ball center must be a vector")
        if not self.radius > 0:
            raise ParameterError(f"ball radius must be > 0, got {self.radius}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def diam(self) -> float:
        return 2.0 * self.radius

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    @classmethod
    def unit(cls, dim: int) -> Ball:
        return cls(np.zeros(dim), 1.0)


def project_ball(x, ball: Ball) -> np.ndarray:
    """Euclidean projection of ``x`` onto ``ball``."""
    x = np.asarray(x, dtype=float)
    if x.shape != ball.center.shape:
        raise ParameterError(f"dimension mismatch: {x.shape} vs ball {ball.center.shape}")
    diff = x - ball.center
    dist = float(np.linalg.norm(diff))
    if dist <= ball.radius:
        return x
    return ball.center + (ball.radius / dist) * diff


def phi(a: float) -> float:
    """sqrt(ln(1 + 24 a^2)), the log factor in the KT regret bound."""
    if a < 0:
        raise ParameterError(f"phi expects a >= 0, got {a}")
    return math.sqrt(math.log1p(24.0 * a * a))


@dataclass(frozen=True, slots=True)
class BetState:
    """KT bettor: step k, wealth u, betting fraction b and the bet p = b*u."""

    k: int
    wealth: float
    fraction: float
    bet: float
    eps: float
    scale: float


def bet_init(eps: float, C: float) -> BetState:
    if not eps > 0:
        raise ParameterError(f"initial wealth must be > 0, got {eps}")
    if not C > 0:
        raise ParameterError(f"scale must be > 0, got {C}")
    return BetState(k=1, wealth=float(eps), fraction=0.0, bet=0.0, eps=float(eps), scale=float(C))


def bet_step(state: BetState, g: float) -> BetState:
    """Feed one outcome ``g`` (|g| <= C) and return the next state.

    The betting fraction is the running mean of -g/C over the k outcomes seen
    so far (denominator k, not k+1).
    """
    g = float(g)
    C = state.scale
    if abs(g) > C * (1.0 + SCALE_RTOL):
        raise ScaleViolation(f"|g|={abs(g)!r} exceeds scale C={C!r}")
    k = state.k
    z = g / C
    wealth = state.wealth - z * state.bet
    fraction = ((k - 1) * state.fraction - z) / k
    return BetState(
        k=k + 1,
        wealth=wealth,
        fraction=fraction,
        bet=fraction * wealth,
        eps=state.eps,
        scale=C,
    )


@dataclass(frozen=True, slots=True)
class DirectionState:
    k: int
    v: np.ndarray
    ball: Ball
    scale: float

    def step_size(self) -> float:
        return self.ball.diam / (self.scale * math.sqrt(2.0 * self.k))


def direction_init(ball: Ball, C: float, dim: int) -> DirectionState:
    if not C > 0:
        raise ParameterError(f"scale must be > 0, got {C}")
    if dim < 1 or ball.dim != dim:
        raise ParameterError(f"dimension {dim} does not match ball of dimension {ball.dim}")
    return DirectionState(k=1, v=ball.center.copy(), ball=ball, scale=float(C))


def direction_step(state: DirectionState, g) -> DirectionState:
    g = np.asarray(g, dtype=float)
    if g.shape != state.v.shape:
        raise ParameterError(f"gradient shape {g.shape} != iterate shape {state.v.shape}")
    norm = float(np.linalg.norm(g))
    if norm > state.scale * (1.0 + SCALE_RTOL):
        raise ScaleViolation(f"||g||={norm!r} exceeds scale C={state.scale!r}")
    v = project_ball(state.v - state.step_size() * g, state.ball)
    return DirectionState(k=state.k + 1, v=v, ball=state.ball, scale=state.scale)

"""Run ledgers, regret bounds and the statistical risk estimators."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import phi
from .losses import LossSpec, mean_loss
from .within_task import run_within_task

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class StepRecord:
    t: int
    i: int
    k: int
    loss: float
    linear: float  # <g, w>
    iterate: np.ndarray
    bias: np.ndarray
    gradient: np.ndarray
    x: np.ndarray
    y: float
    inner_bet: float
    inner_direction: np.ndarray
    meta_bet: float
    meta_direction: np.ndarray


@dataclass(frozen=True)
class RunLedger:
    """Column-wise record of a complete run (one row per datapoint)."""

    variant: str
    t: np.ndarray
    i: np.ndarray
    k: np.ndarray
    losses: np.ndarray
    linear: np.ndarray
    iterates: np.ndarray
    biases: np.ndarray
    gradients: np.ndarray
    X: np.ndarray
    y: np.ndarray
    inner_bets: np.ndarray
    inner_directions: np.ndarray
    meta_bets: np.ndarray
    meta_directions: np.ndarray

    @classmethod
    def from_records(cls, variant: str, records: Sequence[StepRecord]) -> RunLedger:
        if not records:
            raise ValueError("empty run")
        col = lambda name: np.array([getattr(r, name) for r in records])
        return cls(
            variant=variant,
            t=col("t"),
            i=col("i"),
            k=col("k"),
            losses=col("loss").astype(float),
            linear=col("linear").astype(float),
            iterates=np.stack([r.iterate for r in records]),
            biases=np.stack([r.bias for r in records]),
            gradients=np.stack([r.gradient for r in records]),
            X=np.stack([r.x for r in records]),
            y=col("y").astype(float),
            inner_bets=col("inner_bet").astype(float),
            inner_directions=np.stack([r.inner_direction for r in records]),
            meta_bets=col("meta_bet").astype(float),
            meta_directions=np.stack([r.meta_direction for r in records]),
        )

    def __len__(self) -> int:
        return self.t.shape[0]

    @property
    def T(self) -> int:
        return int(self.t[-1])

    def task_slices(self) -> list[slice]:
        bounds = np.flatnonzero(np.diff(self.t)) + 1
        starts = np.concatenate([[0], bounds])
        ends = np.concatenate([bounds, [len(self)]])
        return [slice(int(a), int(b)) for a, b in zip(starts, ends)]

    def task_sizes(self) -> np.ndarray:
        return np.array([s.stop - s.start for s in self.task_slices()])

    def task_averages(self) -> np.ndarray:
        """Average iterate of each task, shape (T, d)."""
        return np.stack([self.iterates[s].mean(axis=0) for s in self.task_slices()])

    def task_biases(self) -> np.ndarray:
        """Bias in force at the first point of each task."""
        return np.stack([self.biases[s.start] for s in self.task_slices()])

    def task_losses(self) -> np.ndarray:
        """Cumulative training loss of each task."""
        return np.array([self.losses[s].sum() for s in self.task_slices()])

    def comparator_rows(self, comparators) -> np.ndarray:
        comparators = np.asarray(comparators, dtype=float)
        if comparators.shape[0] != self.T:
            raise ValueError(f"need {self.T} comparators, got {comparators.shape[0]}")
        return comparators[self.t - 1]


@dataclass(frozen=True)
class Regret:
    loss: float
    linear: float


def linear_regret(ledger: RunLedger, comparators, loss: LossSpec) -> Regret:
    """Loss regret and linearised regret against per-task comparators.

    Convexity forces loss <= linear; a violation beyond rounding raises.
    """
    W = ledger.comparator_rows(comparators)
    comp_preds = np.einsum("nd,nd->n", ledger.X, W)
    comp_losses = _losses(loss, comp_preds, ledger.y)
    loss_reg = float(np.sum(ledger.losses - comp_losses))
    lin_reg = float(np.sum(ledger.linear - np.einsum("nd,nd->n", ledger.gradients, W)))
    if loss_reg > lin_reg + 1e-9 * max(1.0, abs(lin_reg)):
        raise RuntimeError(f"convexity gap violated: loss regret {loss_reg} > linear regret {lin_reg}")
    return Regret(loss_reg, lin_reg)


def _losses(loss: LossSpec, preds: np.ndarray, y: np.ndarray) -> np.ndarray:
    if loss.batch_evaluate is not None:
        return np.asarray(loss.batch_evaluate(preds, y), dtype=float)
    return np.array([loss.evaluate(float(p), float(t)) for p, t in zip(preds, y)])


def _polar(w: np.ndarray) -> tuple[float, np.ndarray]:
    r = float(np.linalg.norm(w))
    return r, (w / r if r > 0 else np.zeros_like(w))


def regret_decomposition(ledger: RunLedger, comparators, theta) -> dict[str, float]:
    """Split the linear regret into within-task magnitude/direction and meta magnitude/direction parts.

    With w_t = p_t v_t + theta and theta = P V, every step satisfies
    <g, w_ti - w_t> = <g,v_ti>(p_ti - p_t) + p_t <g, v_ti - v_t>
                      + <g,V_k>(P_k - P) + P <g, V_k - V>,
    provided the bias in force equals P_k V_k (aggressive/lazy, or itl with theta = 0).
    """
    theta = np.asarray(theta, dtype=float)
    comparators = np.asarray(comparators, dtype=float)
    P, V = _polar(theta)
    polar = [_polar(w - theta) for w in comparators]
    p_t = np.array([p for p, _ in polar])[ledger.t - 1]
    v_t = np.stack([v for _, v in polar])[ledger.t - 1]
    g = ledger.gradients
    gv = np.einsum("nd,nd->n", g, ledger.inner_directions)
    gV = np.einsum("nd,nd->n", g, ledger.meta_directions)
    terms = {
        "within_magnitude": float(np.sum(gv * (ledger.inner_bets - p_t))),
        "within_direction": float(np.sum(p_t * (gv - np.einsum("nd,nd->n", g, v_t)))),
        "meta_magnitude": float(np.sum(gV * (ledger.meta_bets - P))),
        "meta_direction": float(P * np.sum(gV - g @ V)),
    }
    terms["total"] = sum(terms.values())
    return terms


def bound_single_task(e: float, L: float, R: float, n: int, dist: float) -> float:
    """Regret bound of the biased learner against a comparator at distance ``dist`` from its bias."""
    return R * L * (e + (2 * SQRT2 + phi(dist * n / e)) * dist * math.sqrt(n))


def var_terms(comparators, theta, e: float, n: int) -> tuple[float, float]:
    """(mean distance to theta, mean of phi(dist n / e) * dist)."""
    dists = np.linalg.norm(np.asarray(comparators, dtype=float) - np.asarray(theta, dtype=float), axis=1)
    var = float(np.mean(dists))
    var_hat = float(np.mean([phi(r * n / e) * r for r in dists]))
    return var, var_hat


@dataclass(frozen=True)
class BoundInputs:
    e: float
    E: float
    L: float
    R: float
    n: int
    T: int
    comparators: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        if min(self.e, self.E, self.L, self.R) <= 0 or self.n < 1 or self.T < 1:
            raise ValueError("bound inputs need positive scales and sizes")
        if np.asarray(self.comparators).shape[0] != self.T:
            raise ValueError("comparator count must equal T")


def bound_fixed_bias(b: BoundInputs) -> float:
    """Across-tasks bound for a fixed bias (term A)."""
    var, var_hat = var_terms(b.comparators, b.theta, b.e, b.n)
    return b.R * b.L * (b.e * b.T + (2 * SQRT2 * var + var_hat) * math.sqrt(b.n) * b.T)


def meta_price(b: BoundInputs, variant: str) -> float:
    """Extra term paid for learning the bias (term B)."""
    P = float(np.linalg.norm(b.theta))
    if variant == "aggressive":
        nT = b.n * b.T
        return b.R * b.L * (b.E + (2 * SQRT2 + phi(P * nT / b.E)) * P * math.sqrt(nT))
    if variant == "lazy":
        return b.R * b.L * (b.E * b.n + (2 * SQRT2 + phi(P * b.T / b.E)) * P * b.n * math.sqrt(b.T))
    raise ValueError(f"no meta bound for variant {variant!r}")


def bound_meta(b: BoundInputs, variant: str) -> float:
    return bound_fixed_bias(b) + meta_price(b, variant)


def oracle_bias(comparators) -> np.ndarray:
    comparators = np.asarray(comparators, dtype=float)
    if comparators.ndim != 2 or comparators.shape[0] == 0:
        raise ValueError("oracle_bias needs a non-empty (T, d) array")
    return comparators.mean(axis=0)


def lad_solution(X, y, iterations: int = 10_000) -> np.ndarray:
    """Approximate least-absolute-deviation fit by full-batch subgradient descent.

    Starts from the least-squares solution; returns the best iterate seen.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.linalg.lstsq(X, y, rcond=None)[0]
    obj = lambda v: float(np.mean(np.abs(X @ v - y)))
    best, best_obj = w.copy(), obj(w)
    G = float(np.mean(np.linalg.norm(X, axis=1))) or 1.0
    D = max(float(np.linalg.norm(w)), 1.0)
    for k in range(1, iterations + 1):
        g = X.T @ np.sign(X @ w - y) / X.shape[0]
        w = w - (D / (G * math.sqrt(k))) * g
        val = obj(w)
        if val < best_obj:
            best, best_obj = w.copy(), val
    return best


def task_test_errors(ledger: RunLedger, tasks, loss: LossSpec) -> np.ndarray:
    """Test-set average loss of each task's averaged iterate."""
    avgs = ledger.task_averages()
    if len(tasks) != avgs.shape[0]:
        raise ValueError(f"ledger has {avgs.shape[0]} tasks, environment {len(tasks)}")
    out = np.empty(len(tasks))
    for j, (task, w) in enumerate(zip(tasks, avgs)):
        if task.n_test == 0:
            raise ValueError(f"task {j + 1} has an empty test set")
        out[j] = mean_loss(loss, task.X_test, task.y_test, w)
    return out


def mtl_risk(ledger: RunLedger, env, loss: LossSpec) -> float:
    """Average multi-task test risk of the per-task averaged iterates."""
    return float(np.mean(task_test_errors(ledger, env.tasks, loss)))


def target_risk(env, loss: LossSpec) -> float:
    """Mean test risk of the environment's target predictors (oracle risk estimate)."""
    return float(np.mean([mean_loss(loss, t.X_test, t.y_test, t.target) for t in env.tasks]))


@dataclass(frozen=True)
class MonteCarloEstimate:
    mean: float
    stderr: float
    values: np.ndarray


def _estimate(values) -> MonteCarloEstimate:
    values = np.asarray(values, dtype=float)
    se = float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else math.inf
    return MonteCarloEstimate(float(values.mean()), se, values)


def meta_transfer_estimate(
    biases,
    test_tasks,
    loss: LossSpec,
    e: float,
    L: float,
    R: float,
    sample_seed: int,
    n_samples: int,
) -> MonteCarloEstimate:
    """Monte Carlo transfer risk of the biased learner with a uniformly sampled bias.

    Each sample draws a bias and a fresh task, runs the learner on the task's
    training split and scores its averaged iterate on the test split. Tasks
    and biases come from independent streams, so two calls with the same seed
    and task list visit the same tasks (paired comparisons).
    """
    biases = np.asarray(biases, dtype=float)
    if biases.ndim != 2 or biases.shape[0] == 0 or len(test_tasks) == 0 or n_samples < 1:
        raise ValueError("meta_transfer_estimate needs biases, test tasks and n_samples >= 1")
    task_rng, bias_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(sample_seed).spawn(2))
    values = np.empty(n_samples)
    for j in range(n_samples):
        task = test_tasks[int(task_rng.integers(len(test_tasks)))]
        theta = biases[int(bias_rng.integers(biases.shape[0]))]
        run = run_within_task(theta, task.X_train, task.y_train, loss, e, L, R)
        values[j] = mean_loss(loss, task.X_test, task.y_test, run.average_iterate)
    return _estimate(values)


@dataclass(frozen=True)
class OnlineToBatchReport:
    excess_risk: float  # mean over seeds of MTL risk - oracle risk
    average_regret: float  # mean over seeds of regret vs targets / (nT)
    stderr: float  # standard error of the per-seed difference
    margin: float  # average_regret + 3 stderr - excess_risk
    holds: bool


def online_to_batch_check(runs, loss: LossSpec, min_seeds: int = 30) -> OnlineToBatchReport:
    """Check E[MTL risk] - E*[MTL] <= E[regret vs targets]/(nT) up to 3 standard errors.

    ``runs`` is a sequence of (ledger, environment) pairs, one per seed, on
    synthetic environments whose targets and test sets are known.
    """
    if len(runs) < min_seeds:
        raise ValueError(f"need at least {min_seeds} seeds, got {len(runs)}")
    excess, regret = [], []
    for ledger, env in runs:
        excess.append(mtl_risk(ledger, env, loss) - target_risk(env, loss))
        regret.append(linear_regret(ledger, env.targets(), loss).loss / len(ledger))
    excess, regret = np.array(excess), np.array(regret)
    diff = _estimate(excess - regret)
    margin = float(regret.mean() + 3 * diff.stderr - excess.mean())
    return OnlineToBatchReport(float(excess.mean()), float(regret.mean()), diff.stderr, margin, margin >= 0)

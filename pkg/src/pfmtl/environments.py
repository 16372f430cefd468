"""Task sequences: synthetic low-variance environments and CSV ingestion."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np


class EnvError(ValueError):
    """Invalid environment parameters or an empty result."""


class CsvFormatError(EnvError):
    """Malformed multi-task CSV; message carries the 1-based row number."""


@dataclass(frozen=True)
class Task:
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    target: np.ndarray | None = None
    task_id: str | None = None

    @property
    def n_train(self) -> int:
        return self.X_train.shape[0]

    @property
    def n_test(self) -> int:
        return self.X_test.shape[0]


@dataclass(frozen=True)
class Environment:
    tasks: tuple[Task, ...]
    R: float
    d: int
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return len(self.tasks)

    @property
    def n(self) -> int | None:
        """Common training size, or None when tasks differ."""
        sizes = {t.n_train for t in self.tasks}
        return sizes.pop() if len(sizes) == 1 else None

    def train_stream(self):
        return [(t.X_train, t.y_train) for t in self.tasks]

    def targets(self) -> np.ndarray:
        if any(t.target is None for t in self.tasks):
            raise EnvError("environment has no target vectors")
        return np.stack([t.target for t in self.tasks])


def sample_sphere(rng: np.random.Generator, m: int, d: int) -> np.ndarray:
    """``m`` points uniform on the unit sphere in R^d (normalised Gaussians)."""
    z = rng.standard_normal((m, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def n_test_points(n: int, test_fraction: float) -> int:
    if test_fraction == 0:
        return 0
    return math.ceil(n * test_fraction / (1.0 - test_fraction) - 1e-9)


def gen_synthetic(
    seed: int,
    T: int,
    n: int,
    d: int,
    theta_star,
    task_std: float,
    test_fraction: float = 0.5,
) -> Environment:
    """Low-variance regression environment.

    Targets w ~ N(theta_star, task_std^2 I); inputs uniform on the unit
    sphere; labels <x, w> + noise with std ||w||/sqrt(d), which gives
    signal-to-noise ratio 1 under sphere inputs.
    """
    if T < 1 or n < 1 or d < 1:
        raise EnvError(f"T, n, d must be >= 1 (got T={T}, n={n}, d={d})")
    if task_std < 0:
        raise EnvError(f"task_std must be >= 0, got {task_std}")
    if not 0 <= test_fraction < 1:
        raise EnvError(f"test_fraction must lie in [0, 1), got {test_fraction}")
    theta_star = np.broadcast_to(np.asarray(theta_star, dtype=float), (d,)).copy()
    rng = np.random.default_rng(seed)
    m = n_test_points(n, test_fraction)
    tasks = []
    for _ in range(T):
        w = theta_star + task_std * rng.standard_normal(d)
        noise_std = float(np.linalg.norm(w)) / math.sqrt(d)
        X = sample_sphere(rng, n + m, d)
        y = X @ w + noise_std * rng.standard_normal(n + m)
        tasks.append(Task(X[:n], y[:n], X[n:], y[n:], target=w))
    meta = {
        "source": "synthetic",
        "seed": seed,
        "theta_star": theta_star.tolist(),
        "task_std": task_std,
        "snr": 1.0,
    }
    return Environment(tuple(tasks), R=1.0, d=d, meta=meta)


def load_csv(
    path,
    task_column: str,
    feature_columns: Sequence[str],
    label_column: str,
    R: float | None = None,
) -> Environment:
    """Long-format multi-task CSV: one row per datapoint, tasks keyed by ``task_column``.

    With ``R=None`` the input bound is measured as the largest row norm.
    Every row becomes training data; use :func:`split_train_test` afterwards.
    """
    path = Path(path)
    rows_by_task: dict[str, list[tuple[list[float], float]]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: row 1: missing header") from None
        header = [h.strip() for h in header]
        needed = [task_column, *feature_columns, label_column]
        missing = [c for c in needed if c not in header]
        if missing:
            raise CsvFormatError(f"{path}: row 1: missing columns {missing}")
        t_idx = header.index(task_column)
        f_idx = [header.index(c) for c in feature_columns]
        y_idx = header.index(label_column)
        for rowno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise CsvFormatError(
                    f"{path}: row {rowno}: expected {len(header)} fields, got {len(row)}"
                )
            key = row[t_idx].strip()
            if not key:
                raise CsvFormatError(f"{path}: row {rowno}: empty task id")
            try:
                feats = [float(row[j]) for j in f_idx]
                label = float(row[y_idx])
            except ValueError as exc:
                raise CsvFormatError(f"{path}: row {rowno}: non-numeric cell ({exc})") from None
            if not all(map(math.isfinite, feats + [label])):
                raise CsvFormatError(f"{path}: row {rowno}: non-finite value")
            rows_by_task.setdefault(key, []).append((feats, label))
    if not rows_by_task:
        raise CsvFormatError(f"{path}: no data rows")

    d = len(feature_columns)
    tasks = []
    for key, rows in rows_by_task.items():
        X = np.array([r[0] for r in rows], dtype=float).reshape(len(rows), d)
        y = np.array([r[1] for r in rows], dtype=float)
        tasks.append(Task(X, y, np.empty((0, d)), np.empty(0), task_id=key))
    measured = max(float(np.linalg.norm(t.X_train, axis=1).max()) for t in tasks)
    if R is None:
        R = measured if measured > 0 else 1.0
    elif measured > R * (1 + 1e-12):
        raise CsvFormatError(f"{path}: declared R={R} but an input has norm {measured}")
    meta = {"source": str(path), "R_policy": "measure" if R == measured else "declare"}
    return Environment(tuple(tasks), R=float(R), d=d, meta=meta)


def save_csv(env: Environment, path, task_column="task", label_column="y") -> list[str]:
    """Write the training rows in the long format read by :func:`load_csv`."""
    feature_columns = [f"x{j}" for j in range(env.d)]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([task_column, *feature_columns, label_column])
        for idx, task in enumerate(env.tasks):
            key = task.task_id if task.task_id is not None else str(idx)
            for x, y in zip(task.X_train, task.y_train):
                w.writerow([key, *(repr(float(v)) for v in x), repr(float(y))])
    return feature_columns


def split_train_test(env: Environment, train_fraction: float, seed: int) -> Environment:
    """Random per-task split, ``floor(fraction * count)`` (at least 1) rows for training.

    Existing test rows are pooled with training rows before splitting.
    """
    if not 0 < train_fraction <= 1:
        raise EnvError(f"train_fraction must lie in (0, 1], got {train_fraction}")
    rng = np.random.default_rng(seed)
    tasks = []
    for task in env.tasks:
        X = np.concatenate([task.X_train, task.X_test])
        y = np.concatenate([task.y_train, task.y_test])
        count = X.shape[0]
        if train_fraction == 1:
            tasks.append(replace(task, X_train=X, y_train=y, X_test=X[:0], y_test=y[:0]))
            continue
        if count < 2:
            raise EnvError(f"task {task.task_id!r} has {count} point(s); cannot split")
        n_tr = max(1, math.floor(train_fraction * count + 1e-9))
        perm = rng.permutation(count)
        tr, te = np.sort(perm[:n_tr]), np.sort(perm[n_tr:])
        tasks.append(replace(task, X_train=X[tr], y_train=y[tr], X_test=X[te], y_test=y[te]))
    return replace(env, tasks=tuple(tasks))


def truncate_tasks(env: Environment, n_common: int, policy: str = "drop_short", seed: int = 0) -> Environment:
    """Bring every task to exactly ``n_common`` training points.

    drop_short  drop tasks below n_common, keep the first n_common rows of the rest
    subsample   draw n_common rows without replacement, dropping tasks that are too short
    """
    if n_common < 1:
        raise EnvError(f"n_common must be >= 1, got {n_common}")
    if policy not in ("drop_short", "subsample"):
        raise EnvError(f"unknown truncation policy {policy!r}")
    rng = np.random.default_rng(seed)
    kept = []
    for task in env.tasks:
        if task.n_train < n_common:
            continue
        if policy == "drop_short":
            idx = np.arange(n_common)
        else:
            idx = np.sort(rng.choice(task.n_train, size=n_common, replace=False))
        kept.append(replace(task, X_train=task.X_train[idx], y_train=task.y_train[idx]))
    if not kept:
        raise EnvError(f"no task has at least {n_common} training points")
    return replace(env, tasks=tuple(kept))

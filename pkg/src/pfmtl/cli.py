"""Experiment harness: ``pfmtl run | sweep-wealth | report``."""
from __future__ import annotations

import argparse
import csv
import functools
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import environments as envs
from .evaluation import (
    BoundInputs,
    bound_single_task,
    lad_solution,
    linear_regret,
    meta_price,
    meta_transfer_estimate,
    oracle_bias,
    task_test_errors,
)
from .losses import abs_loss
from .meta import collect_biases, meta_init, run_tasks

log = logging.getLogger("pfmtl")

RESULT_COLUMNS = ("variant", "seed", "axis", "metric", "value")
METRICS = ("cumulative_error_avg", "linear_regret", "mtl_test_error", "transfer_estimate", "bound_value")
KNOWN_VARIANTS = ("itl", "aggressive", "lazy", "oracle", "fixed")
# expected ordering on low-variance data, best first
ORDERING = ("oracle", "aggressive", "lazy", "itl")
ORDERED_METRICS = ("cumulative_error_avg", "mtl_test_error")

SYNTHETIC_KEYS = {"type", "T", "n", "d", "theta_star", "task_std", "test_fraction"}
CSV_KEYS = {"type", "path", "task_column", "feature_columns", "label_column", "R", "truncate_policy"}
TOP_KEYS = {
    "environment", "variants", "e", "E", "seeds", "T", "n", "train_fraction",
    "output_dir", "emit", "fixed_bias", "transfer_samples", "transfer_tasks",
}
EMIT_KEYS = {"ledger", "summary", "plot"}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    environment: dict
    variants: list[str]
    seeds: list[int]
    output_dir: Path
    e: float = 1.0
    E: float = 1.0
    T: int | None = None
    n: int | None = None
    train_fraction: float = 0.8
    emit: dict = field(default_factory=lambda: {"ledger": False, "summary": True, "plot": True})
    fixed_bias: list[float] | None = None
    transfer_samples: int = 0
    transfer_tasks: int = 100

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        _reject_unknown(raw, TOP_KEYS, "config")
        for key in ("environment", "variants", "seeds", "output_dir"):
            if key not in raw:
                raise ConfigError(f"config: missing required field {key!r}")
        env = raw["environment"]
        if not isinstance(env, dict) or env.get("type") not in ("synthetic", "csv"):
            raise ConfigError("environment.type must be 'synthetic' or 'csv'")
        _reject_unknown(env, SYNTHETIC_KEYS if env["type"] == "synthetic" else CSV_KEYS, "environment")
        variants = raw["variants"]
        if not isinstance(variants, list) or not variants:
            raise ConfigError("variants: need a non-empty list")
        for v in variants:
            if v not in KNOWN_VARIANTS:
                raise ConfigError(f"variants: unknown variant {v!r}")
        if "fixed" in variants and raw.get("fixed_bias") is None:
            raise ConfigError("fixed_bias: required when variant 'fixed' is requested")
        seeds = raw["seeds"]
        if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
            raise ConfigError("seeds: need a non-empty list of integers")
        for key in ("e", "E"):
            if key in raw and not (isinstance(raw[key], (int, float)) and raw[key] > 0):
                raise ConfigError(f"{key}: initial wealth must be > 0")
        emit = dict(cls.__dataclass_fields__["emit"].default_factory())
        if "emit" in raw:
            _reject_unknown(raw["emit"], EMIT_KEYS, "emit")
            emit.update(raw["emit"])
        out = Path(raw["output_dir"])
        if base_dir is not None and not out.is_absolute():
            out = base_dir / out
        if env["type"] == "csv" and base_dir is not None and not Path(env["path"]).is_absolute():
            env = {**env, "path": str(base_dir / env["path"])}
        kwargs = {k: raw[k] for k in ("e", "E", "T", "n", "train_fraction", "fixed_bias",
                                      "transfer_samples", "transfer_tasks") if k in raw}
        return cls(environment=env, variants=list(variants), seeds=list(seeds),
                   output_dir=out, emit=emit, **kwargs)


def _reject_unknown(d: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {unknown}")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return ExperimentConfig.from_dict(raw, base_dir=path.parent)


# -- environments -------------------------------------------------------------

@functools.lru_cache(maxsize=4)
def _load_csv_cached(path, task_column, feature_columns, label_column, R):
    return envs.load_csv(path, task_column, list(feature_columns), label_column, R=R)


def build_environment(cfg: ExperimentConfig, seed: int) -> envs.Environment:
    spec = cfg.environment
    if spec["type"] == "synthetic":
        try:
            return envs.gen_synthetic(
                seed=seed,
                T=cfg.T or spec["T"],
                n=cfg.n or spec["n"],
                d=spec["d"],
                theta_star=spec.get("theta_star", 0.0),
                task_std=spec.get("task_std", 1.0),
                test_fraction=spec.get("test_fraction", 0.5),
            )
        except KeyError as exc:
            raise ConfigError(f"environment: missing field {exc.args[0]!r}") from None
    try:
        base = _load_csv_cached(spec["path"], spec["task_column"], tuple(spec["feature_columns"]),
                                spec["label_column"], spec.get("R"))
    except KeyError as exc:
        raise ConfigError(f"environment: missing field {exc.args[0]!r}") from None
    env = envs.split_train_test(base, cfg.train_fraction, seed)
    if cfg.n is not None:
        env = envs.truncate_tasks(env, cfg.n, spec.get("truncate_policy", "drop_short"), seed=seed)
    if cfg.T is not None:
        env = envs.Environment(env.tasks[: cfg.T], env.R, env.d, env.meta)
    return env


def comparators_for(env: envs.Environment) -> np.ndarray:
    """Synthetic targets, or per-task LAD fits on the training split."""
    if all(t.target is not None for t in env.tasks):
        return env.targets()
    return np.stack([lad_solution(t.X_train, t.y_train) for t in env.tasks])


# -- running ------------------------------------------------------------------

def run_variant(cfg: ExperimentConfig, variant: str, seed: int, env, comparators, e=None, E=None):
    """Run one (variant, seed); return (ledger, result rows)."""
    e = cfg.e if e is None else e
    E = cfg.E if E is None else E
    loss = abs_loss()
    n = env.n
    if variant in ("aggressive", "lazy") and n is None:
        raise ConfigError(f"variant {variant!r} needs equal task sizes; set 'n' to truncate")
    theta_ref = oracle_bias(comparators)
    if variant == "oracle":
        m = meta_init("fixed", e, E, 1.0, env.R, n, env.d, theta=theta_ref)
        theta_bound = theta_ref
    elif variant == "fixed":
        m = meta_init("fixed", e, E, 1.0, env.R, n, env.d, theta=cfg.fixed_bias)
        theta_bound = m.fixed_theta
    elif variant == "itl":
        m = meta_init("itl", e, E, 1.0, env.R, n, env.d)
        theta_bound = np.zeros(env.d)
    else:
        m = meta_init(variant, e, E, 1.0, env.R, n, env.d)
        theta_bound = theta_ref
    ledger, m = run_tasks(m, env.train_stream(), loss)

    rows = []
    sizes = ledger.task_sizes()
    ks = np.cumsum(sizes)
    tt = np.arange(1, len(sizes) + 1)
    # cumulative loss / k; at task boundaries this is the running mean over tasks of per-task average loss
    steps = np.arange(1, len(ledger) + 1)
    cum_err = np.cumsum(ledger.losses) / steps
    rows += [(variant, seed, int(k), "cumulative_error_avg", float(v)) for k, v in zip(steps, cum_err)]

    W = ledger.comparator_rows(comparators)
    step_lin = ledger.linear - np.einsum("nd,nd->n", ledger.gradients, W)
    lin_reg = np.cumsum(step_lin)[ks - 1]
    rows += [(variant, seed, int(t), "linear_regret", float(v)) for t, v in zip(tt, lin_reg)]

    dists = np.linalg.norm(comparators - theta_bound, axis=1)
    per_task = np.array([bound_single_task(e, 1.0, env.R, int(s), float(r)) for s, r in zip(sizes, dists)])
    bound = np.cumsum(per_task)
    if variant in ("aggressive", "lazy"):
        bound = bound + np.array([
            meta_price(BoundInputs(e, E, 1.0, env.R, n, int(t), comparators[:t], theta_bound), variant)
            for t in tt
        ])
    rows += [(variant, seed, int(t), "bound_value", float(v)) for t, v in zip(tt, bound)]

    if all(t.n_test > 0 for t in env.tasks):
        errs = task_test_errors(ledger, env.tasks, loss)
        rows += [(variant, seed, int(t), "mtl_test_error", float(v))
                 for t, v in zip(tt, np.cumsum(errs) / tt)]

    if cfg.transfer_samples > 0 and cfg.environment["type"] == "synthetic":
        fresh = _fresh_tasks(cfg, seed)
        biases = collect_biases(m, ledger)
        est = meta_transfer_estimate(biases, fresh, loss, e, 1.0, env.R, seed, cfg.transfer_samples)
        rows.append((variant, seed, int(tt[-1]), "transfer_estimate", est.mean))
    return ledger, rows


def _fresh_tasks(cfg: ExperimentConfig, seed: int):
    spec = cfg.environment
    env = envs.gen_synthetic(
        seed=[seed, 1],  # independent stream from the training environment
        T=cfg.transfer_tasks,
        n=cfg.n or spec["n"],
        d=spec["d"],
        theta_star=spec.get("theta_star", 0.0),
        task_std=spec.get("task_std", 1.0),
        test_fraction=spec.get("test_fraction", 0.5) or 0.5,
    )
    return env.tasks


def fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def write_rows(path: Path, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for row in rows:
            w.writerow([fmt(c) for c in row])


def seed_average(rows) -> list[tuple]:
    groups: dict[tuple, list[float]] = {}
    for variant, _seed, axis, metric, value in rows:
        groups.setdefault((variant, metric, axis), []).append(value)
    return [(v, "mean", a, m, float(np.mean(vals))) for (v, m, a), vals in groups.items()]


def write_ledger(path: Path, ledger) -> None:
    d = ledger.iterates.shape[1]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "i", "k", "loss", "linear", *[f"w{j}" for j in range(d)], *[f"bias{j}" for j in range(d)]])
        for j in range(len(ledger)):
            w.writerow([int(ledger.t[j]), int(ledger.i[j]), int(ledger.k[j]), fmt(float(ledger.losses[j])),
                        fmt(float(ledger.linear[j])), *map(fmt, map(float, ledger.iterates[j])),
                        *map(fmt, map(float, ledger.biases[j]))])


def run(cfg: ExperimentConfig) -> dict:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in cfg.seeds:
        env = build_environment(cfg, seed)
        comparators = comparators_for(env)
        for variant in cfg.variants:
            log.info("seed %s variant %s", seed, variant)
            ledger, r = run_variant(cfg, variant, seed, env, comparators)
            rows += r
            if cfg.emit.get("ledger"):
                write_ledger(out / f"ledger_{variant}_{seed}.csv", ledger)
    write_rows(out / "results.csv", rows)
    if cfg.emit.get("plot", True):
        write_rows(out / "plot.csv", seed_average(rows))
    summary = summarize(rows)
    if cfg.emit.get("summary", True):
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return summary


def parse_grid(text: str) -> np.ndarray:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 4:
        raise ConfigError("--grid expects min,max,count,spacing")
    try:
        lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise ConfigError(f"--grid: cannot parse {text!r}") from None
    spacing = parts[3]
    if not lo > 0:
        raise ConfigError("--grid: min wealth must be > 0")
    if hi < lo or count < 1:
        raise ConfigError("--grid: need max >= min and count >= 1")
    if spacing == "linear":
        return np.linspace(lo, hi, count)
    if spacing == "log":
        return np.geomspace(lo, hi, count)
    raise ConfigError(f"--grid: spacing must be 'linear' or 'log', got {spacing!r}")


def sweep_wealth(cfg: ExperimentConfig, grid: np.ndarray) -> np.ndarray:
    """Final average cumulative error of the aggressive learner on an (e, E) grid, seed-averaged."""
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    matrix = np.zeros((grid.size, grid.size))
    for seed in cfg.seeds:
        env = build_environment(cfg, seed)
        comparators = comparators_for(env)
        for a, e in enumerate(grid):
            for b, E in enumerate(grid):
                ledger, _ = run_variant(cfg, "aggressive", seed, env, comparators, e=float(e), E=float(E))
                matrix[a, b] += float(ledger.losses.mean())
    matrix /= len(cfg.seeds)
    with (out / "wealth_grid.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["e\\E", *map(fmt, map(float, grid))])
        for e, row in zip(grid, matrix):
            w.writerow([fmt(float(e)), *map(fmt, map(float, row))])
    summary = {
        "grid": [float(g) for g in grid],
        "min": float(matrix.min()),
        "max": float(matrix.max()),
        "max_over_min": float(matrix.max() / matrix.min()),
    }
    (out / "wealth_grid.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return matrix


# -- reporting ----------------------------------------------------------------

def read_rows(path: Path) -> list[tuple]:
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if tuple(header or ()) != RESULT_COLUMNS:
                raise ConfigError(f"{path}: unexpected header {header}")
            rows = []
            for rowno, r in enumerate(reader, start=2):
                if len(r) != 5 or r[3] not in METRICS:
                    raise ConfigError(f"{path}: row {rowno}: malformed result row")
                rows.append((r[0], r[1], int(r[2]), r[3], float(r[4])))
            return rows
    except OSError as exc:
        raise ConfigError(f"cannot read results: {exc}") from None
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: corrupt result file ({exc})") from None


def summarize(rows) -> dict:
    final: dict[tuple, tuple[int, float]] = {}
    for variant, seed, axis, metric, value in rows:
        key = (variant, seed, metric)
        if key not in final or axis >= final[key][0]:
            final[key] = (axis, value)
    per_variant: dict[str, dict[str, list[float]]] = {}
    for (variant, _seed, metric), (_a, value) in final.items():
        per_variant.setdefault(variant, {}).setdefault(metric, []).append(value)
    means = {v: {m: float(np.mean(vals)) for m, vals in ms.items()} for v, ms in per_variant.items()}

    present = [v for v in ORDERING if v in means]
    ordering = {"checked": len(present) >= 2, "variants": present}
    if ordering["checked"]:
        for metric in ORDERED_METRICS:
            vals = [means[v].get(metric) for v in present]
            if any(x is None for x in vals):
                continue
            ordering[metric] = all(a <= b for a, b in zip(vals, vals[1:]))
        ordering["satisfied"] = all(ordering.get(m, True) for m in ORDERED_METRICS)

    regrets = {(v, s, a): val for v, s, a, m, val in rows if m == "linear_regret"}
    checked = violated = 0
    violations = []
    for v, s, a, m, val in rows:
        if m != "bound_value" or (v, s, a) not in regrets:
            continue
        checked += 1
        if regrets[(v, s, a)] > val * (1 + 1e-9):
            violated += 1
            violations.append({"variant": v, "seed": s, "axis": a})
    return {
        "final": means,
        "ordering": ordering,
        "bounds": {"checked": checked, "satisfied": checked - violated, "violated": violated,
                   "violations": violations[:20]},
    }


def report(directory) -> dict:
    directory = Path(directory)
    summary = summarize(read_rows(directory / "results.csv"))
    print(f"results: {directory / 'results.csv'}")
    for variant, metrics in sorted(summary["final"].items()):
        shown = ", ".join(f"{m}={metrics[m]:.6g}" for m in METRICS if m in metrics)
        print(f"  {variant:<11} {shown}")
    order = summary["ordering"]
    if order["checked"]:
        status = "satisfied" if order["satisfied"] else "NOT satisfied"
        print(f"ordering {' <= '.join(order['variants'])}: {status}")
    else:
        print("ordering check skipped (fewer than two ordered variants)")
    b = summary["bounds"]
    flag = "" if b["violated"] == 0 else "  <-- VIOLATED"
    print(f"bounds satisfied: {b['satisfied']}/{b['checked']}{flag}")
    return summary


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="pfmtl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run variants over seeds and write result tables")
    p_run.add_argument("--config", required=True)
    p_sweep = sub.add_parser("sweep-wealth", help="aggressive learner over an (e, E) wealth grid")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--grid", required=True, help="min,max,count,spacing (linear|log)")
    p_report = sub.add_parser("report", help="summarise a results directory")
    p_report.add_argument("--dir", required=True)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "run":
            summary = run(load_config(args.config))
            print(json.dumps(summary["final"], indent=2, sort_keys=True))
        elif args.command == "sweep-wealth":
            cfg = load_config(args.config)
            matrix = sweep_wealth(cfg, parse_grid(args.grid))
            print(f"wealth grid {matrix.shape[0]}x{matrix.shape[1]}: min {matrix.min():.6g}, "
                  f"max {matrix.max():.6g}, ratio {matrix.max() / matrix.min():.4f}")
        else:
            report(args.dir)
    except (ValueError, OSError, KeyError) as exc:
        print(f"pfmtl: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Acceptance suite: one test per criterion, each prints a single PASS/FAIL line.

Run with ``pytest -s tests/test_acceptance.py`` to see the lines inline; they
are also printed when output is captured.
"""
import math
import time

import numpy as np
import pytest

from pfmtl.cli import ExperimentConfig, run, sweep_wealth
from pfmtl.core import Ball, bet_init, bet_step, direction_init, direction_step, phi, project_ball
from pfmtl.environments import (
    CsvFormatError,
    gen_synthetic,
    load_csv,
    save_csv,
    truncate_tasks,
    Environment,
    Task,
)
from pfmtl.evaluation import (
    BoundInputs,
    bound_meta,
    bound_single_task,
    linear_regret,
    meta_transfer_estimate,
    online_to_batch_check,
    oracle_bias,
    regret_decomposition,
)
from pfmtl.losses import abs_loss
from pfmtl.meta import collect_biases, meta_end_task, meta_init, meta_observe, run_tasks
from pfmtl.within_task import ogd_from, run_within_task, shifted_ogd_run, wt_init, wt_observe

LOSS = abs_loss()


@pytest.fixture
def verdict(capsys):
    def emit(label, checks, started):
        failed = [name for name, ok in checks if not ok]
        status = "PASS" if not failed else "FAIL"
        line = f"[{status}] {label} ({time.perf_counter() - started:.1f}s)"
        if failed:
            line += " failed: " + "; ".join(failed)
        with capsys.disabled():
            print("\n" + line)
        assert not failed, line

    return emit


def random_env(rng, seed):
    T, n, d = int(rng.integers(1, 21)), int(rng.integers(1, 51)), int(rng.integers(1, 11))
    return gen_synthetic(seed, T, n, d, rng.uniform(-4, 4, size=d), rng.uniform(0, 2), 0.0)


# 1 ---------------------------------------------------------------------------

def test_criterion_1_bound_suite(verdict):
    started = time.perf_counter()
    rng = np.random.default_rng(2024)
    checks = []
    for s in range(100):
        env = random_env(rng, s)
        comps = env.targets()
        e, E = rng.uniform(0.5, 5, size=2)

        ledger, _ = run_tasks(meta_init("itl", e, E, 1, 1, env.n, env.d), env.train_stream(), LOSS)
        step_lin = ledger.linear - np.einsum("nd,nd->n", ledger.gradients, ledger.comparator_rows(comps))
        for j, sl in enumerate(ledger.task_slices()):
            bound = bound_single_task(e, 1.0, 1.0, env.n, float(np.linalg.norm(comps[j])))
            checks.append((f"env {s} itl task {j + 1}", step_lin[sl].sum() <= bound * (1 + 1e-9)))

        for variant in ("aggressive", "lazy"):
            ledger, _ = run_tasks(meta_init(variant, e, E, 1, 1, env.n, env.d), env.train_stream(), LOSS)
            lin = linear_regret(ledger, comps, LOSS).linear
            for name, theta in (("0", np.zeros(env.d)), ("oracle", oracle_bias(comps))):
                b = BoundInputs(e, E, 1.0, 1.0, env.n, env.T, comps, theta)
                checks.append((f"env {s} {variant} theta={name}", lin <= bound_meta(b, variant) * (1 + 1e-9)))
    verdict(f"criterion 1: bound suite, 100 environments, {len(checks)} inequalities, slack 1e-9", checks, started)


# 2 ---------------------------------------------------------------------------

def test_criterion_2_primitives(verdict):
    started = time.perf_counter()
    rng = np.random.default_rng(7)
    checks = []

    kt_ok = mean_ok = True
    for _ in range(1000):
        C, eps = rng.uniform(0.1, 10), rng.uniform(0.1, 10)
        zs = rng.uniform(-1, 1, 500)
        zs[rng.random(500) < 0.05] = rng.choice([-1.0, 1.0])
        s = bet_init(eps, C)
        total = 0.0
        for k, z in enumerate(zs, start=1):
            s = bet_step(s, z * C)
            total += z
            kt_ok &= s.wealth >= 0 and abs(s.fraction) <= 1
            mean_ok &= abs(s.fraction + total / k) <= 1e-12
    checks += [("wealth >= 0 and |b| <= 1", kt_ok), ("running mean to 1e-12", mean_ok)]

    proj_ok = True
    for _ in range(10_000):
        d = int(rng.integers(1, 8))
        ball = Ball(rng.normal(size=d) * rng.uniform(0, 10), rng.uniform(0.01, 5))
        x, y = rng.normal(size=d) * 10, rng.normal(size=d) * 10
        px, py = project_ball(x, ball), project_ball(y, ball)
        slack = 1e-12 * (np.linalg.norm(ball.center) + np.linalg.norm(x) + np.linalg.norm(y) + 1)
        proj_ok &= np.linalg.norm(project_ball(px, ball) - px) <= slack
        proj_ok &= np.linalg.norm(px - py) <= np.linalg.norm(x - y) + slack
        proj_ok &= np.linalg.norm(px - ball.center) <= ball.radius + slack
    checks.append(("projection idempotent and non-expansive on 10^4 pairs", proj_ok))

    # KT regret against scalar comparators
    p1_ok = True
    for _ in range(100):
        C, eps, K = rng.uniform(0.5, 3), rng.uniform(0.5, 5), int(rng.integers(1, 400))
        gs = np.clip(rng.normal(rng.uniform(-0.5, 0.5) * C, C / 2, K), -C, C)
        s, bets = bet_init(eps, C), np.empty(K)
        for j, g in enumerate(gs):
            bets[j] = s.bet
            s = bet_step(s, g)
        for u in rng.uniform(-20, 20, 10):
            lhs = float(np.sum(gs * (bets - u)))
            rhs = C * (eps + phi(abs(u) * K / eps) * abs(u) * math.sqrt(K))
            p1_ok &= lhs <= rhs * (1 + 1e-9)
    checks.append(("coin-betting regret inequality on 100 sequences", p1_ok))

    # projected OGD regret against comparators in the ball
    p2_ok = True
    for _ in range(100):
        d, C, K = int(rng.integers(1, 8)), rng.uniform(0.5, 3), int(rng.integers(1, 400))
        ball = Ball(rng.normal(size=d), rng.uniform(0.2, 3))
        g = rng.normal(size=(K, d))
        g *= (C * rng.uniform(0, 1, K) / np.linalg.norm(g, axis=1))[:, None]
        s, vs = direction_init(ball, C, d), np.empty((K, d))
        for j in range(K):
            vs[j] = s.v
            s = direction_step(s, g[j])
        gsum = g.sum(axis=0)
        comps = [ball.center - ball.radius * gsum / np.linalg.norm(gsum)]
        comps += [project_ball(ball.center + rng.normal(size=d) * ball.radius, ball) for _ in range(5)]
        rhs = C * math.sqrt(2) * ball.diam * math.sqrt(K)
        p2_ok &= all(np.sum(g * (vs - v)) <= rhs * (1 + 1e-9) for v in comps)
    checks.append(("projected descent regret inequality on 100 sequences", p2_ok))
    verdict("criterion 2: primitive suite", checks, started)


# 3 ---------------------------------------------------------------------------

def test_criterion_3_hand_traces(verdict):
    started = time.perf_counter()
    tol = 1e-12
    close = lambda a, b: bool(np.all(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) <= tol))
    checks = []

    s1 = bet_step(bet_init(1, 1), 1)
    s2 = bet_step(s1, -1)
    checks.append(("bet_step (1,1): +1 then -1",
                   close([s1.wealth, s1.fraction, s1.bet, s2.wealth, s2.fraction, s2.bet], [1, -1, -1, 0, 0, 0])))
    s3 = bet_step(bet_init(2, 4), 0)
    checks.append(("bet_step zero outcome", close([s3.wealth, s3.fraction, s3.bet], [2, 0, 0]) and s3.k == 2))

    ds = direction_init(Ball.unit(2), 1, 2)
    checks.append(("direction step size sqrt 2", close(ds.step_size(), math.sqrt(2))))
    ds2 = direction_step(ds, [1, 0])
    checks.append(("direction_step projects to (-1, 0)", close(ds2.v, [-1, 0])))
    checks.append(("direction_step zero gradient", close(direction_step(ds2, [0, 0]).v, [-1, 0])))

    incurred, nxt = wt_observe(wt_init(np.zeros(1), 1, 1, 1), [1.0], -1.0, LOSS)
    checks.append(("wt_observe trace", close([incurred, nxt.magnitude.bet, nxt.magnitude.wealth], [1, 0, 1])
                   and close(nxt.direction.v, [-1]) and nxt.i == 2))

    m = meta_init("lazy", 1, 1, 1, 1, 5, 3)
    for _ in range(5):
        _, m = meta_observe(m, np.array([1.0, 0, 0]), -1000.0, LOSS)
    m2 = meta_end_task(m)
    checks.append(("meta_end_task lazy trace", close(m.lazy_sum, [5, 0, 0]) and close(m2.meta_direction.v, [-1, 0, 0])
                   and m2.meta_magnitude.bet == 0.0 and m2.t == 2 and m2.i == 0 and not np.any(m2.lazy_sum)))

    ma = meta_init("aggressive", 1, 1, 1, 1, 4, 2)
    x = np.array([0.6, 0.8])
    rec, ma2 = meta_observe(ma, x, -3.0, LOSS)
    checks.append(("aggressive first step", close(rec.gradient, x) and close(ma2.meta_direction.v, -x)
                   and close(ma2.inner.direction.v, -x) and ma2.k == 2))
    verdict("criterion 3: hand-trace fixtures at 1e-12", checks, started)


# 4 ---------------------------------------------------------------------------

def test_criterion_4_equivalences(verdict):
    started = time.perf_counter()
    rng = np.random.default_rng(11)
    checks = []
    for s in range(20):
        env = random_env(rng, 100 + s)
        e = rng.uniform(0.5, 5)
        ledger, _ = run_tasks(meta_init("itl", e, 1, 1, 1, env.n, env.d), env.train_stream(), LOSS)
        same = all(
            np.array_equal(ledger.iterates[sl], run_within_task(np.zeros(env.d), t.X_train, t.y_train, LOSS, e, 1, 1).iterates)
            for sl, t in zip(ledger.task_slices(), env.tasks)
        )
        checks.append((f"itl bit-identical env {s}", same))

        task = env.tasks[0]
        theta, gamma = rng.normal(size=env.d) * 3, rng.uniform(0.01, 1)
        diff = np.abs(shifted_ogd_run(theta, gamma, task.X_train, task.y_train, LOSS)
                      - ogd_from(theta, gamma, task.X_train, task.y_train, LOSS)).max()
        checks.append((f"OGD started at bias env {s}", diff <= 1e-12))

        ledger, _ = run_tasks(meta_init("aggressive", e, 1, 1, 1, env.n, env.d), env.train_stream(), LOSS)
        comps = env.targets()
        lin = linear_regret(ledger, comps, LOSS).linear
        for theta in (oracle_bias(comps), np.zeros(env.d)):
            total = regret_decomposition(ledger, comps, theta)["total"]
            checks.append((f"four-way identity env {s}", abs(total - lin) <= 1e-9 * max(1.0, abs(lin))))
    verdict("criterion 4: equivalence oracles", checks, started)


# 5 ---------------------------------------------------------------------------

FIG1_ENV = {"type": "synthetic", "T": 400, "n": 25, "d": 10, "theta_star": 4.0, "task_std": 1.0,
            "test_fraction": 0.5}


def test_criterion_5_figure_reproduction(verdict, tmp_path):
    started = time.perf_counter()
    cfg = ExperimentConfig.from_dict({
        "environment": FIG1_ENV, "variants": ["oracle", "aggressive", "lazy", "itl"],
        "seeds": list(range(10)), "e": 1.0, "E": 1.0, "output_dir": str(tmp_path),
    })
    final = run(cfg)["final"]
    checks = []
    for metric in ("cumulative_error_avg", "mtl_test_error"):
        o, a, l, i = (final[v][metric] for v in ("oracle", "aggressive", "lazy", "itl"))
        checks.append((f"{metric} ordering {o:.4g} <= {a:.4g} <= {l:.4g} <= {i:.4g}", o <= a <= l <= i))
        checks.append((f"{metric} aggressive 10% below itl", a <= 0.9 * i))
        checks.append((f"{metric} lazy 10% below itl", l <= 0.9 * i))
    a, o = final["aggressive"]["mtl_test_error"], final["oracle"]["mtl_test_error"]
    checks.append((f"aggressive mtl {a:.4g} within 20% of oracle {o:.4g}", abs(a - o) <= 0.2 * o))
    verdict("criterion 5: synthetic figure reproduction, 10 seeds", checks, started)


# 6 ---------------------------------------------------------------------------

def test_criterion_6_wealth_sensitivity(verdict, tmp_path):
    started = time.perf_counter()
    cfg = ExperimentConfig.from_dict({
        "environment": {**FIG1_ENV, "T": 100}, "variants": ["aggressive"],
        "seeds": [0, 1, 2], "output_dir": str(tmp_path),
    })
    matrix = sweep_wealth(cfg, np.linspace(0.1, 100, 5))
    ratio = float(matrix.max() / matrix.min())
    verdict(f"criterion 6: wealth grid 5x5 on [0.1, 100], max/min = {ratio:.4f} < 2",
            [("ratio below 2", ratio < 2)], started)


# 7 ---------------------------------------------------------------------------

def test_criterion_7_statistical_conversions(verdict):
    started = time.perf_counter()
    checks = []
    envs_ = [gen_synthetic(seed, 50, 25, 10, 4.0, 1.0, 0.5) for seed in range(30)]
    lazy_biases = None
    for variant in ("aggressive", "lazy"):
        runs = []
        for env in envs_:
            m = meta_init(variant, 1, 1, 1, 1, env.n, env.d)
            ledger, m = run_tasks(m, env.train_stream(), LOSS)
            runs.append((ledger, env))
            if variant == "lazy" and lazy_biases is None:
                lazy_biases = collect_biases(m, ledger)
        rep = online_to_batch_check(runs, LOSS)
        checks.append((f"{variant} online-to-batch excess {rep.excess_risk:.4g} <= regret/nT "
                       f"{rep.average_regret:.4g} + 3 SE", rep.holds))

    fresh = gen_synthetic([0, 1], 100, 25, 10, 4.0, 1.0, 0.5).tasks
    lazy = meta_transfer_estimate(lazy_biases, fresh, LOSS, 1, 1, 1, sample_seed=5, n_samples=400)
    zero = meta_transfer_estimate(np.zeros((1, 10)), fresh, LOSS, 1, 1, 1, sample_seed=5, n_samples=400)
    diff = zero.values - lazy.values
    se = diff.std(ddof=1) / math.sqrt(diff.size)
    checks.append((f"lazy transfer {lazy.mean:.4g} beats zero bias {zero.mean:.4g} by > 3 SE "
                   f"(gap {diff.mean():.4g}, SE {se:.3g})", diff.mean() > 3 * se))
    verdict("criterion 7: statistical conversions, 30 seeds", checks, started)


# 8 ---------------------------------------------------------------------------

def shaped_env(rng, sizes, d):
    tasks = []
    for j, n in enumerate(sizes):
        X = rng.normal(size=(n, d))
        tasks.append(Task(X, X @ rng.normal(size=d) + rng.normal(size=n), np.empty((0, d)), np.empty(0),
                          task_id=f"t{j:03d}"))
    R = max(float(np.linalg.norm(t.X_train, axis=1).max()) for t in tasks)
    return Environment(tuple(tasks), R=R, d=d, meta={})


def round_trips(env, path):
    cols = save_csv(env, path)
    back = load_csv(path, "task", cols, "y")
    return back, (back.T == env.T and back.d == env.d and math.isclose(back.R, env.R)
                  and all(np.array_equal(a.X_train, b.X_train) and np.array_equal(a.y_train, b.y_train)
                          for a, b in zip(back.tasks, env.tasks)))


def test_criterion_8_ingestion(verdict, tmp_path):
    started = time.perf_counter()
    rng = np.random.default_rng(3)
    checks = []

    lenk, ok = round_trips(shaped_env(rng, [20] * 180, 13), tmp_path / "lenk.csv")
    checks.append(("Lenk-shaped T=180 n=20 d=13", ok and lenk.n == 20))

    sizes = rng.integers(24, 252, size=139)
    sizes[:2] = [24, 251]
    schools, ok = round_trips(shaped_env(rng, sizes.tolist(), 26), tmp_path / "schools.csv")
    ns = [t.n_train for t in schools.tasks]
    checks.append(("Schools-shaped T=139 d=26 n in [24, 251]", ok and min(ns) == 24 and max(ns) == 251
                   and schools.n is None))
    checks.append(("Schools truncation to common n", truncate_tasks(schools, 24).n == 24))

    header = "task,x0,x1,y\n"
    bad = {
        "short row": (header + "a,1,2,3\na,1,2\n", "row 3"),
        "non-numeric": (header + "a,1,2,3\nb,1,zz,3\n", "row 3"),
        "empty task id": (header + "a,1,2,3\na,1,2,3\n,1,2,3\n", "row 4"),
        "non-finite": (header + "a,nan,2,3\n", "row 2"),
        "missing column": ("task,x0,y\na,1,2\n", "row 1"),
    }
    for name, (text, where) in bad.items():
        p = tmp_path / f"bad_{name.replace(' ', '_')}.csv"
        p.write_text(text)
        try:
            load_csv(p, "task", ["x0", "x1"], "y")
            checks.append((f"malformed {name} rejected", False))
        except CsvFormatError as exc:
            checks.append((f"malformed {name} names {where}", where in str(exc)))
    verdict("criterion 8: CSV ingestion", checks, started)

"""Acceptance criteria, one printed PASS/FAIL line each.

The reduced-scale set estimates (criteria 9 and 10) take tens of minutes on
a single core. ``BLOCHREACH_QUICK=1`` skips criterion 10 during development;
``BLOCHREACH_FULL=1`` adds the M=20 runs, which take many hours.
``BLOCHREACH_WORKERS`` sets the worker pool for the estimation runs.
"""
import math
import os
import time

import numpy as np
import pytest

from blochreach import dynamics
from blochreach.controls import ControlBox, PiecewiseControl, RegularizerSpec, scaled_box, suggest_weights
from blochreach.dynamics import SystemParams
from blochreach.estimation import (
    Estimation,
    GridSpec,
    MemoryStore,
    NodeResult,
    RetryPolicy,
    build_grid,
    metrics,
    replay_value,
    sweep,
)
from blochreach.optimize import OptimizerConfig, differential_evolution, dual_annealing
from conftest import ACCEPTANCE_LINES

PARAMS = SystemParams()
BOX = ControlBox()
WORKERS = int(os.environ.get("BLOCHREACH_WORKERS", "1"))
QUICK = os.environ.get("BLOCHREACH_QUICK") == "1"
FULL = os.environ.get("BLOCHREACH_FULL") == "1"

# every completed estimation, replayed by criterion 11
COMPLETED = []


def record(label, ok, detail):
    line = f"criterion {label}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def skip(label, reason):
    ACCEPTANCE_LINES.append(f"criterion {label}: NOT RUN  {reason}")
    pytest.skip(reason)


def random_control(rng, box=BOX, T=10.0):
    return PiecewiseControl(T, rng.uniform(box.v_lo, box.v_hi, box.Nv), rng.uniform(0, box.n_hi, box.Nn))


def test_1_grid_cardinality():
    t = time.time()
    n = len(build_grid(20))
    elapsed = time.time() - t
    assert record(1, n == 4169 and elapsed < 1, f"M=20 grid has {n} nodes (want 4169) in {elapsed:.2f}s")


def test_2_cube_volume():
    grid = GridSpec(20)
    pts = build_grid(20)
    k = int(np.argmin(np.abs(pts).sum(axis=1)))
    node = NodeResult(k, tuple(pts[k]), True, 0.0, 0.0, 0.0, [0.0] * 20, [0.0], ["DE"], 1)
    est = Estimation("rs", (0, 0, 0), 5.0, 1.0, grid, PARAMS, None, None, [node])
    vol = metrics(est)["volume"]
    assert record(2, vol == 0.001 and grid.cube_volume == 0.001, f"one-node volume {vol!r} (want 0.001 exactly)")


def test_3_matrix_constants():
    m = dynamics.bloch_matrices(SystemParams(omega=1, gamma=0.05, kappa=0.01))
    want = {
        "A": [[-0.025, 1, 0], [-1, -0.025, 0], [0, 0, -0.05]],
        "Bv": [[0, 0, 0], [0, 0, -0.02], [0, 0.02, 0]],
        "Bn": [[-0.05, 0, 0], [0, -0.05, 0], [0, 0, -0.1]],
        "d": [0, 0, 0.05],
    }
    ok = all(np.array_equal(getattr(m, k), np.array(v, dtype=float)) for k, v in want.items())
    assert record(3, ok, "A, Bv, Bn, d match entrywise (exact)")


def test_4_propagator_cross_validation():
    rng = np.random.default_rng(2024)
    t = time.time()
    worst_rk = worst_gksl = 0.0
    for _ in range(100):
        u = random_control(rng)
        x = rng.normal(size=3)
        x0 = x / np.linalg.norm(x) * rng.uniform() ** (1 / 3)
        exact = dynamics.propagate_exact(x0, u, PARAMS)[-1]
        worst_rk = max(worst_rk, np.linalg.norm(exact - dynamics.propagate_adaptive(x0, u, PARAMS)))
        worst_gksl = max(worst_gksl, np.linalg.norm(exact - dynamics.propagate_gksl(x0, u, PARAMS)))
    elapsed = time.time() - t
    ok = worst_rk <= 1e-8 and worst_gksl <= 1e-7 and elapsed < 120
    assert record(
        4, ok,
        f"100 controls: max|exact-adaptive| {worst_rk:.2e} (tol 1e-8), "
        f"max|exact-GKSL| {worst_gksl:.2e} (tol 1e-7), {elapsed:.1f}s",
    )


def test_5_steady_state():
    t = time.time()
    worst = 0.0
    for n in (0.0, 0.5, 2.0, 20.0):
        u = PiecewiseControl(400.0, np.zeros(10), np.full(10, n))
        end = dynamics.propagate_exact([0.3, -0.4, 0.1], u, PARAMS)[-1]
        worst = max(worst, np.linalg.norm(end - [0, 0, 1 / (1 + 2 * n)]))
    elapsed = time.time() - t
    assert record(5, worst <= 1e-3 and elapsed < 10, f"max distance to (0,0,1/(1+2n)) {worst:.2e} (tol 1e-3)")


def test_6_weight_rule():
    box = scaled_box(BOX, 0.4)
    rs_rows = {(10, 0.5): (36, 1, 9), (20, 1): (31, 1, 9), (40, 2): (21, 1, 7)}
    cs_rows = {(20, 1): (31, 1, 9), (40, 2): (21, 1, 7)}
    got = {}
    ok = True
    for rows in (rs_rows, cs_rows):
        for deltas, want in rows.items():
            got[deltas] = suggest_weights(box, *deltas, delta_xT=0.05, p=1)
            ok = ok and got[deltas] == want
    detail = ", ".join(f"{k}->{v}" for k, v in got.items())
    assert record(6, ok, f"five weight triples reproduced exactly: {detail}")


def rastrigin(x):
    x = np.atleast_2d(x)
    return 10 * x.shape[1] + (x * x - 10 * np.cos(2 * np.pi * x)).sum(axis=1)


@pytest.mark.parametrize("method", ["DE", "DA"])
def test_7_rastrigin(method):
    fn = differential_evolution if method == "DE" else dual_annealing
    box = np.tile([-5.12, 5.12], (10, 1))
    t = time.time()
    values = []
    for seed in range(3):
        cfg = OptimizerConfig(method=method, budget=200_000, seed=seed)
        values.append(fn(rastrigin, box, cfg, vectorized=True).fun)
    elapsed = time.time() - t
    ok = max(values) < 1e-4 and elapsed < 120
    detail = ", ".join(f"{v:.1e}" for v in values)
    assert record(f"7{method}", ok, f"{method} 10-d Rastrigin, budget 200000, 3 seeds: {detail} (tol 1e-4), {elapsed:.1f}s")


def test_8_ball_invariance():
    rng = np.random.default_rng(8)
    t = time.time()
    worst = 0.0
    for _ in range(1000):
        u = random_control(rng)
        # each segment split in ten so the check also covers interior times
        fine = PiecewiseControl(u.T, np.repeat(u.v, 10), np.repeat(u.n, 10))
        x = rng.normal(size=3)
        traj = dynamics.propagate_exact(x / np.linalg.norm(x), fine, PARAMS)
        worst = max(worst, np.sqrt((traj**2).sum(axis=1)).max())
    elapsed = time.time() - t
    ok = worst <= 1 + 1e-9 and elapsed < 60
    assert record(8, ok, f"1000 controls from sphere starts: max |x(t)| - 1 = {worst - 1:.2e} (tol 1e-9)")


def _nested(ests):
    sets = [set(e.member_indices) for e in ests]
    return all(b <= a for a, b in zip(sets, sets[1:])), [len(s) for s in sets]


def test_9_sweep_nesting():
    t = time.time()
    ests = sweep(
        "rs", (0.5, 0, 0), 5.0, ControlBox(Nv=6, Nn=6), [1.0, 0.4, 0.1], GridSpec(10), PARAMS, None,
        OptimizerConfig(budget=5000, seed=9), RetryPolicy(), WORKERS, MemoryStore(),
    )
    elapsed = time.time() - t
    COMPLETED.extend(ests)
    ok, counts = _nested(ests)
    assert record(9, ok and counts[0] > 0, f"M=10 member counts {counts} nested along 1->0.4->0.1 ({elapsed:.0f}s)")


def _reduced(kind, anchor, T, mult, reg=None, M=10, seed=10):
    ests = sweep(
        kind, anchor, T, BOX, [mult], GridSpec(M), PARAMS, reg,
        OptimizerConfig(seed=seed), RetryPolicy(), WORKERS, MemoryStore(),
    )
    COMPLETED.extend(ests)
    return ests[0]


def _max_step(dv, dn, grid):
    w = suggest_weights(scaled_box(BOX, 0.4), dv, dn, delta_xT=grid.delta, p=grid.p)
    return RegularizerSpec("max", beta_v=w[1], beta_n=w[2], beta_xT=w[0], delta_v=dv, delta_n=dn)


TABLE_DELTAS = [(10, 0.5), (20, 1), (40, 2)]
FULL_COUNTS = [393, 749, 1041]


def _scale(M):
    if M == 20 and not FULL:
        return "set BLOCHREACH_FULL=1 for the M=20 runs (many hours)"
    if M == 10 and QUICK:
        return "BLOCHREACH_QUICK=1"
    return None


@pytest.mark.parametrize("M", [10, 20])
def test_10a_pole_fills_ball(M):
    label = f"10a(M={M})"
    if reason := _scale(M):
        skip(label, reason)
    t = time.time()
    frac = metrics(_reduced("rs", (0, 0, 1), 5.0, 1.0, M=M))["volume_fraction"]
    assert record(label, frac >= 0.85, f"x0=(0,0,1), T=5, d=1: volume fraction {frac:.3f} (want >= 0.85), {time.time() - t:.0f}s")


@pytest.mark.parametrize("M", [10, 20])
def test_10b_center_small(M):
    label = f"10b(M={M})"
    if reason := _scale(M):
        skip(label, reason)
    t = time.time()
    frac = metrics(_reduced("rs", (0, 0, 0), 5.0, 1.0, M=M))["volume_fraction"]
    ok = 0.005 <= frac <= 0.05
    assert record(label, ok, f"x0=(0,0,0), T=5, d=1: volume fraction {100 * frac:.2f}% (want 0.5%..5%), {time.time() - t:.0f}s")


@pytest.mark.parametrize("M", [10, 20])
def test_10c_threshold_trend(M):
    label = f"10c(M={M})"
    if reason := _scale(M):
        skip(label, reason)
    t = time.time()
    grid = GridSpec(M)
    counts = [
        metrics(_reduced("rs", (0.5, 0, 0), 10.0, 0.4, _max_step(dv, dn, grid), M=M))["member_count"]
        for dv, dn in TABLE_DELTAS
    ]
    ok = counts[0] < counts[1] < counts[2]
    detail = f"max-step rows (10,0.5)->(20,1)->(40,2): counts {counts} strictly increasing"
    if M == 20:
        close = all(abs(c - w) <= 0.2 * w for c, w in zip(counts, FULL_COUNTS))
        ok = ok and close
        detail += f", within 20% of {FULL_COUNTS}: {close}"
    assert record(label, ok, f"{detail}, {time.time() - t:.0f}s")


@pytest.mark.parametrize("M", [10, 20])
def test_10d_cs_coverage(M):
    label = f"10d(M={M})"
    if reason := _scale(M):
        skip(label, reason)
    t = time.time()
    grid = GridSpec(M)
    est = _reduced("cs", (0.5, 0, 0), 10.0, 0.4, _max_step(40, 2, grid), M=M)
    share = metrics(est)["member_count"] / len(build_grid(M))
    assert record(label, share >= 0.9, f"CS of (0.5,0,0), delta=(40,2): {100 * share:.1f}% of grid (want >= 90%), {time.time() - t:.0f}s")


def test_11_evidence_replay():
    runs = COMPLETED
    if not runs:
        # run on its own: produce a small estimation to replay
        runs = sweep(
            "rs", (0.5, 0, 0), 5.0, ControlBox(Nv=4, Nn=4), [1.0, 0.4], GridSpec(6), PARAMS, None,
            OptimizerConfig(budget=3000, seed=11), RetryPolicy(),
        )
    checked = 0
    worst = 0.0
    for est in runs:
        for node in est.members:
            steps = len(node.control) // 2
            box = scaled_box(ControlBox(Nv=steps, Nn=steps), est.d_mult)
            value = replay_value(est.kind, est.anchor, est.T, box, est.grid, est.params, est.regularizer, node)
            worst = max(worst, abs(value - node.best_value))
            checked += 1
    ok = checked > 0 and worst <= 1e-12 and math.isfinite(worst)
    assert record(11, ok, f"{checked} member controls replayed, max |stored - replayed| {worst:.1e} (tol 1e-12)")


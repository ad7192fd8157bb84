"""Built-in oracle checks run by ``blochreach validate``.

Each check returns ``(name, passed, detail)``. The propagator checks compare
the exact solver with two independent integrators, so a corrupted system
matrix shows up as a cross-check failure.
"""
from __future__ import annotations

import numpy as np

from . import dynamics
from .controls import ControlBox, PiecewiseControl, suggest_weights
from .dynamics import SystemParams
from .estimation import GridSpec, build_grid
from .optimize import OptimizerConfig, differential_evolution, dual_annealing

REFERENCE_MATRICES = {
    "A": [[-0.025, 1.0, 0.0], [-1.0, -0.025, 0.0], [0.0, 0.0, -0.05]],
    "Bv": [[0.0, 0.0, 0.0], [0.0, 0.0, -0.02], [0.0, 0.02, 0.0]],
    "Bn": [[-0.05, 0.0, 0.0], [0.0, -0.05, 0.0], [0.0, 0.0, -0.1]],
    "d": [0.0, 0.0, 0.05],
}

# (box multiplier, delta_v, delta_n) -> (beta_xT, beta_v, beta_n)
WEIGHT_CASES = [
    ((0.4, 10.0, 0.5), (36, 1, 9)),
    ((0.4, 20.0, 1.0), (31, 1, 9)),
    ((0.4, 40.0, 2.0), (21, 1, 7)),
]


def random_control(rng, box: ControlBox, T: float) -> PiecewiseControl:
    v = rng.uniform(box.v_lo, box.v_hi, box.Nv)
    n = rng.uniform(0.0, box.n_hi, box.Nn)
    return PiecewiseControl(T, v, n)


def random_sphere_point(rng) -> np.ndarray:
    x = rng.normal(size=3)
    return x / np.linalg.norm(x)


def check_grid():
    n20, n2 = len(build_grid(20)), len(build_grid(2))
    return "grid cardinality", n20 == 4169 and n2 == 7, f"M=20: {n20} nodes, M=2: {n2} nodes"


def check_cube_volume():
    vol = GridSpec(M=20).cube_volume
    return "cube volume", vol == 0.001, f"M=20: {vol!r}"


def check_matrices():
    m = dynamics.bloch_matrices(SystemParams())
    ok = all(np.array_equal(getattr(m, k), np.array(v)) for k, v in REFERENCE_MATRICES.items())
    return "matrix constants", ok, "default parameters"


def check_propagators(samples: int = 10, seed: int = 0):
    rng = np.random.default_rng(seed)
    box = ControlBox()
    params = SystemParams()
    worst_rk, worst_gksl = 0.0, 0.0
    for _ in range(samples):
        x0 = random_sphere_point(rng) * rng.uniform(0, 1) ** (1 / 3)
        u = random_control(rng, box, 10.0)
        exact = dynamics.propagate_exact(x0, u, params)[-1]
        worst_rk = max(worst_rk, np.linalg.norm(exact - dynamics.propagate_adaptive(x0, u, params)))
        worst_gksl = max(worst_gksl, np.linalg.norm(exact - dynamics.propagate_gksl(x0, u, params)))
    ok = worst_rk <= 1e-8 and worst_gksl <= 1e-7
    return "propagator cross-check", bool(ok), f"max |exact-rk| {worst_rk:.2e}, max |exact-gksl| {worst_gksl:.2e}"


def check_steady_state():
    params = SystemParams()
    worst = 0.0
    for n in (0.0, 0.5, 2.0, 20.0):
        u = PiecewiseControl(400.0, np.zeros(10), np.full(10, n))
        end = dynamics.propagate_exact([1.0, 0.0, 0.0], u, params)[-1]
        worst = max(worst, np.linalg.norm(end - [0, 0, 1 / (1 + 2 * n)]))
    return "steady state", bool(worst <= 1e-3), f"max distance {worst:.2e}"


def check_ball_invariance(samples: int = 100, seed: int = 1):
    rng = np.random.default_rng(seed)
    box = ControlBox()
    params = SystemParams()
    worst = 0.0
    for _ in range(samples):
        traj = dynamics.propagate_exact(random_sphere_point(rng), random_control(rng, box, 10.0), params)
        worst = max(worst, np.sqrt((traj**2).sum(axis=1)).max())
    return "ball invariance", bool(worst <= 1 + 1e-9), f"max |x| {worst:.12f}"


def check_weights():
    got = []
    for (d, dv, dn), want in WEIGHT_CASES:
        box = ControlBox(d_mult=d)
        got.append(suggest_weights(box, dv, dn, GridSpec(M=20).delta) == want)
    return "weight rule", all(got), f"{sum(got)}/{len(got)} triples reproduced"


def rastrigin(x):
    x = np.atleast_2d(x)
    return 10.0 * x.shape[1] + (x * x - 10.0 * np.cos(2 * np.pi * x)).sum(axis=1)


def check_optimizers():
    box = np.tile([-5.12, 5.12], (10, 1))
    de = differential_evolution(rastrigin, box, OptimizerConfig(budget=200_000, seed=0), vectorized=True)
    da = dual_annealing(rastrigin, box, OptimizerConfig(method="DA", budget=200_000, seed=0), vectorized=True)
    ok = de.fun <= 1e-4 and da.fun <= 1e-4
    return "optimizers on Rastrigin", bool(ok), f"DE {de.fun:.2e}, DA {da.fun:.2e}"


CHECKS = [
    check_grid,
    check_cube_volume,
    check_matrices,
    check_propagators,
    check_steady_state,
    check_ball_invariance,
    check_weights,
    check_optimizers,
]


def run_all():
    out = []
    for check in CHECKS:
        try:
            out.append(check())
        except Exception as exc:  # a crashing check is a failing check
            out.append((check.__name__, False, f"error: {exc}"))
    return out

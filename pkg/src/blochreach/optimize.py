"""Derivative-free global minimizers over boxes.

Two stochastic methods are provided: classic differential evolution
(rand/1/bin) and generalized simulated annealing with a Tsallis visiting
distribution (dual annealing). :func:`multi_run` repeats them with derived
seeds and stops as soon as a non-negative objective reaches zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import gammaln

__all__ = [
    "OptimizerConfig",
    "OptResult",
    "differential_evolution",
    "dual_annealing",
    "pattern_search",
    "multi_run",
    "mix_seed",
]

WORST = float(np.finfo(float).max)


@dataclass(frozen=True)
class OptimizerConfig:
    method: str = "DE"
    budget: int = 30_000
    seed: int = 0
    stop_tol: Optional[float] = 1e-12
    # differential evolution
    popsize: Optional[int] = None  # default 2 * dim
    mutation: tuple = (0.5, 1.0)
    recombination: float = 0.7
    stagnation_tol: float = 1e-10
    # dual annealing
    visit: float = 2.62
    accept: float = -5.0
    initial_temp: float = 5230.0
    restart_temp_ratio: float = 2e-5
    local_search: bool = True
    initial_temps: Optional[tuple] = None  # per-run overrides inside multi_run

    def __post_init__(self):
        if self.method not in ("DE", "DA"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.budget < 1:
            raise ValueError("budget must be positive")
        if not 0 <= self.recombination <= 1:
            raise ValueError("recombination rate must lie in [0, 1]")
        lo, hi = self.mutation
        if not 0 < lo <= hi <= 2:
            raise ValueError("mutation range must satisfy 0 < lo <= hi <= 2")
        if not 1 < self.visit <= 3:
            raise ValueError("visiting parameter must lie in (1, 3]")
        if self.accept >= 1:
            raise ValueError("acceptance parameter must be below 1")
        if self.initial_temp <= 0:
            raise ValueError("initial temperature must be positive")


@dataclass
class OptResult:
    x: np.ndarray
    fun: float
    nfev: int
    nruns: int = 1
    terminated_early: bool = False
    run_values: list = field(default_factory=list)
    run_methods: list = field(default_factory=list)


def mix_seed(base: int, *keys: int) -> int:
    """Deterministic 63-bit seed derived from ``base`` and integer keys."""
    ss = np.random.SeedSequence(entropy=int(base), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


class _Counter:
    """Wraps an objective: counts evaluations, maps failures to the worst value."""

    def __init__(self, f: Callable, vectorized: bool):
        self.f = f
        self.vectorized = vectorized
        self.nfev = 0
        self.best_x = None
        self.best_f = math.inf

    def batch(self, xs: np.ndarray) -> np.ndarray:
        xs = np.atleast_2d(xs)
        if self.vectorized:
            try:
                vals = np.asarray(self.f(xs), dtype=float).reshape(len(xs))
            except Exception:
                vals = np.array([self._one(x) for x in xs])
        else:
            vals = np.array([self._one(x) for x in xs])
        vals = np.where(np.isfinite(vals), vals, WORST)
        self.nfev += len(xs)
        k = int(np.argmin(vals))
        if vals[k] < self.best_f:
            self.best_f = float(vals[k])
            self.best_x = xs[k].copy()
        return vals

    def one(self, x: np.ndarray) -> float:
        return float(self.batch(x[None])[0])

    def _one(self, x):
        try:
            return float(self.f(x))
        except Exception:
            return WORST


def _reflect(x: np.ndarray, lo: np.ndarray, hi: np.ndarray, rng) -> np.ndarray:
    x = np.where(x < lo, 2 * lo - x, x)
    x = np.where(x > hi, 2 * hi - x, x)
    bad = (x < lo) | (x > hi)
    if bad.any():
        fresh = lo + rng.random(x.shape) * (hi - lo)
        x = np.where(bad, fresh, x)
    return x


def differential_evolution(
    f: Callable,
    bounds,
    cfg: OptimizerConfig = OptimizerConfig(),
    vectorized: bool = False,
    callback: Optional[Callable] = None,
) -> OptResult:
    """rand/1/bin differential evolution with dithered mutation.

    Candidates leaving the box are reflected back in. Stops on the
    evaluation budget, on ``best <= stop_tol`` or when the population energy
    spread falls below ``stagnation_tol`` relative to its mean.
    ``callback(generation, population_energies)`` runs after each generation.
    """
    bounds = np.asarray(bounds, dtype=float)
    lo, hi = bounds[:, 0], bounds[:, 1]
    dim = len(lo)
    rng = np.random.default_rng(cfg.seed)
    size = cfg.popsize or 2 * dim
    size = max(size, 4)
    fn = _Counter(f, vectorized)

    pop = lo + rng.random((size, dim)) * (hi - lo)
    energy = fn.batch(pop)
    early = False
    rows = np.arange(size)
    gen = 0
    while fn.nfev < cfg.budget:
        if cfg.stop_tol is not None and fn.best_f <= cfg.stop_tol:
            early = True
            break
        if np.all(energy < WORST) and np.std(energy) <= cfg.stagnation_tol * abs(np.mean(energy)):
            break

        # three distinct partners per member, none equal to the member
        keys = rng.random((size, size))
        keys[rows, rows] = np.inf
        r = np.argpartition(keys, 3, axis=1)[:, :3]
        scale = rng.uniform(*cfg.mutation)
        mutant = pop[r[:, 0]] + scale * (pop[r[:, 1]] - pop[r[:, 2]])
        mutant = _reflect(mutant, lo, hi, rng)

        cross = rng.random((size, dim)) < cfg.recombination
        cross[rows, rng.integers(dim, size=size)] = True
        trial = np.where(cross, mutant, pop)

        e_trial = fn.batch(trial)
        better = e_trial <= energy
        pop[better] = trial[better]
        energy[better] = e_trial[better]
        gen += 1
        if callback is not None:
            callback(gen, energy.copy())

    if cfg.stop_tol is not None and fn.best_f <= cfg.stop_tol:
        early = True
    return OptResult(
        x=fn.best_x, fun=fn.best_f, nfev=fn.nfev, terminated_early=early,
        run_values=[fn.best_f], run_methods=["DE"],
    )


def pattern_search(
    f: Callable,
    x0,
    bounds,
    max_evals: int,
    step: float = 0.01,
    min_step: float = 1e-9,
    stop_tol: Optional[float] = None,
    vectorized: bool = False,
    f0: Optional[float] = None,
    _counter: Optional[_Counter] = None,
):
    """Compass search polling all ``2 * dim`` coordinate moves at once.

    ``step`` and ``min_step`` are fractions of each coordinate's range. The
    best improving poll point is taken; otherwise the step is halved.
    Returns ``(x, f(x), evaluations)``.
    """
    bounds = np.asarray(bounds, dtype=float)
    lo, hi = bounds[:, 0], bounds[:, 1]
    span = hi - lo
    dim = len(lo)
    fn = _counter or _Counter(f, vectorized)
    start = fn.nfev
    x = np.clip(np.asarray(x0, dtype=float), lo, hi)
    fx = fn.one(x) if f0 is None else f0
    h = step
    eye = np.eye(dim)
    while h >= min_step and fn.nfev - start + 2 * dim <= max_evals:
        if stop_tol is not None and fx <= stop_tol:
            break
        moves = np.vstack([eye, -eye]) * (h * span)
        poll = np.clip(x + moves, lo, hi)
        vals = fn.batch(poll)
        k = int(np.argmin(vals))
        if vals[k] < fx:
            x, fx = poll[k], float(vals[k])
        else:
            h *= 0.5
    return x, fx, fn.nfev - start


class _Visiting:
    """Tsallis (distorted Cauchy-Lorentz) step generator."""

    TAIL_LIMIT = 1e8

    def __init__(self, qv: float, rng):
        self.qv = qv
        self.rng = rng
        f2 = math.exp((4.0 - qv) * math.log(qv - 1.0))
        f3 = math.exp((2.0 - qv) * math.log(2.0) / (qv - 1.0))
        self.f4p = math.sqrt(math.pi) * f2 / (f3 * (3.0 - qv))
        f5 = 1.0 / (qv - 1.0) - 0.5
        d1 = 2.0 - f5
        self.f6 = math.pi * (1.0 - f5) / math.sin(math.pi * (1.0 - f5)) / math.exp(gammaln(d1))

    def draw(self, temperature: float, size: int) -> np.ndarray:
        qv = self.qv
        x, y = self.rng.normal(size=size), self.rng.normal(size=size)
        f1 = math.exp(math.log(temperature) / (qv - 1.0))
        f4 = self.f4p * f1
        x = x * math.exp(-(qv - 1.0) * math.log(self.f6 / f4) / (3.0 - qv))
        den = np.exp((qv - 1.0) * np.log(np.abs(y)) / (3.0 - qv))
        step = x / den
        return np.clip(step, -self.TAIL_LIMIT, self.TAIL_LIMIT)


def dual_annealing(
    f: Callable, bounds, cfg: OptimizerConfig = OptimizerConfig(method="DA"), vectorized: bool = False
) -> OptResult:
    """Generalized simulated annealing with optional compass-search polish.

    Each iteration runs a Markov chain of ``2 * dim`` visits: first moves of
    all coordinates, then single-coordinate moves. Temperatures follow
    ``T_k = T0 (2^(qv-1) - 1) / ((1 + k)^(qv-1) - 1)``; uphill moves are
    accepted with the generalized Metropolis probability of order ``qa``.
    When the chain improves the incumbent it is polished by pattern search.
    The walk restarts from a random point once the temperature falls below
    ``restart_temp_ratio * T0``.
    """
    bounds = np.asarray(bounds, dtype=float)
    lo, hi = bounds[:, 0], bounds[:, 1]
    dim = len(lo)
    rng = np.random.default_rng(cfg.seed)
    fn = _Counter(f, vectorized)
    visit = _Visiting(cfg.visit, rng)
    qv, qa, t0 = cfg.visit, cfg.accept, cfg.initial_temp
    t1 = math.exp((qv - 1) * math.log(2.0)) - 1.0
    polish_cap = 400 * dim

    def done():
        return fn.nfev >= cfg.budget or (cfg.stop_tol is not None and fn.best_f <= cfg.stop_tol)

    def polish(x, fx):
        if not cfg.local_search:
            return x, fx
        room = min(polish_cap, cfg.budget - fn.nfev)
        if room < 2 * dim:
            return x, fx
        x2, f2, _ = pattern_search(
            f, x, bounds, room, stop_tol=cfg.stop_tol, f0=fx, _counter=fn
        )
        return x2, f2

    x = lo + rng.random(dim) * (hi - lo)
    e = fn.one(x)
    k = 0
    while not done():
        s = k + 2.0
        temp = t0 * t1 / (math.exp((qv - 1) * math.log(s)) - 1.0)
        if temp < cfg.restart_temp_ratio * t0:
            # restart the walk, polishing the incumbent first
            polish(fn.best_x.copy(), fn.best_f)
            k = 0
            x = lo + rng.random(dim) * (hi - lo)
            e = fn.one(x)
            continue
        temp_step = temp / float(k + 1)
        improved = False
        for j in range(2 * dim):
            if done():
                break
            if j < dim:
                xv = np.clip(x + visit.draw(temp, dim), lo, hi)
            else:
                i = j - dim
                xv = x.copy()
                xv[i] = np.clip(x[i] + visit.draw(temp, 1)[0], lo[i], hi[i])
            incumbent = fn.best_f
            ev = fn.one(xv)
            if ev < e:
                improved = improved or ev < incumbent
                x, e = xv, ev
            else:
                pqv_temp = 1.0 - (1.0 - qa) * (ev - e) / temp_step
                if pqv_temp > 0:
                    pqv = math.exp(math.log(pqv_temp) / (1.0 - qa))
                    if rng.random() <= pqv:
                        x, e = xv, ev
        if improved and not done():
            bx, bf = polish(fn.best_x.copy(), fn.best_f)
            if bf <= e:
                x, e = bx.copy(), bf
        k += 1

    early = cfg.stop_tol is not None and fn.best_f <= cfg.stop_tol
    return OptResult(
        x=fn.best_x, fun=fn.best_f, nfev=fn.nfev, terminated_early=early,
        run_values=[fn.best_f], run_methods=["DA"],
    )


_METHODS = {"DE": differential_evolution, "DA": dual_annealing}


def multi_run(
    f: Callable,
    bounds,
    cfg: OptimizerConfig = OptimizerConfig(),
    methods: Sequence[str] = ("DE", "DA"),
    runs_per_method: int = 2,
    zero_tol: float = 1e-12,
    nonnegative: bool = True,
    vectorized: bool = False,
) -> OptResult:
    """Several seeded runs of each method; returns the overall best.

    Run ``r`` of method ``m`` uses seed ``mix_seed(cfg.seed, m, r)``. For
    objectives declared non-negative the sequence stops as soon as a run
    reaches ``zero_tol``.
    """
    if runs_per_method < 1:
        raise ValueError("runs_per_method must be at least 1")
    best: Optional[OptResult] = None
    values, used, nfev, nruns = [], [], 0, 0
    for mi, method in enumerate(methods):
        for r in range(runs_per_method):
            run_cfg = replace(
                cfg,
                method=method,
                seed=mix_seed(cfg.seed, mi, r),
                stop_tol=zero_tol if nonnegative else None,
            )
            if method == "DA" and cfg.initial_temps:
                run_cfg = replace(run_cfg, initial_temp=cfg.initial_temps[r % len(cfg.initial_temps)])
            res = _METHODS[method](f, bounds, run_cfg, vectorized=vectorized)
            nfev += res.nfev
            nruns += 1
            values.append(res.fun)
            used.append(method)
            if best is None or res.fun < best.fun:
                best = res
            if nonnegative and res.fun <= zero_tol:
                return OptResult(best.x, best.fun, nfev, nruns, True, values, used)
    return OptResult(best.x, best.fun, nfev, nruns, False, values, used)

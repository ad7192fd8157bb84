"""Grid-based estimation of reachable and controllability sets.

The Bloch ball is covered by a cubic lattice of step ``2/M``. An outer
axis-aligned box is found first by extremizing each endpoint coordinate; the
lattice nodes inside it are then classified one by one by minimizing a
mismatch objective. A node is a member when some admissible control brings
the trajectory within ``delta = 1/(M z)`` of it (reachable set) or from it
to the target (controllability set).
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .controls import ControlBox, RegularizerKind, RegularizerSpec, scaled_box
from .dynamics import SystemParams
from .objectives import (
    AXIS_DIRECTIONS,
    BoxProblem,
    CsBoxProblem,
    MismatchSpec,
    NodeProblem,
    _finite,
)
from .optimize import OptimizerConfig, OptResult, mix_seed, multi_run

__all__ = [
    "GridSpec",
    "RetryPolicy",
    "OuterBox",
    "NodeResult",
    "Estimation",
    "MemoryStore",
    "build_grid",
    "outer_box_rs",
    "outer_box_cs",
    "pointwise_rs",
    "pointwise_cs",
    "sweep",
    "metrics",
    "replay_value",
    "BALL_VOLUME",
]

BALL_VOLUME = 4.0 * math.pi / 3.0


@dataclass(frozen=True)
class GridSpec:
    """Lattice with ``M`` subdivisions per axis; tolerance ``1/(M z)`` in norm ``p``."""

    M: int = 20
    z: float = 1.0
    p: int = 1
    outer_power: str = "p"

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("M must be at least 1")
        if self.z < 1:
            raise ValueError("z must be at least 1")
        if self.p not in (1, 2):
            raise ValueError("p must be 1 or 2")

    @property
    def eps(self) -> float:
        return 1.0 / self.M

    @property
    def delta(self) -> float:
        return 1.0 / (self.M * self.z)

    @property
    def cube_volume(self) -> float:
        # 8 / M^3 rather than (2/M)^3: exact for the usual M
        return 8.0 / self.M**3

    def mismatch_spec(self) -> MismatchSpec:
        return MismatchSpec(p=self.p, delta=self.delta, outer_power=self.outer_power)


@dataclass(frozen=True)
class RetryPolicy:
    """Runs per node: ``runs_per_method`` of each method, in order."""

    methods: tuple = ("DE", "DA")
    runs_per_method: int = 2
    zero_tol: float = 1e-12


def build_grid(M: int) -> np.ndarray:
    """Lattice points ``-1 + 2 i / M`` inside the closed unit ball.

    Ordered lexicographically by the integer indices ``(i1, i2, i3)``.
    Membership is decided in exact integer arithmetic.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    i = np.arange(M + 1)
    idx = np.stack(np.meshgrid(i, i, i, indexing="ij"), axis=-1).reshape(-1, 3)
    keep = ((2 * idx - M) ** 2).sum(axis=1) <= M * M
    return -1.0 + 2.0 * idx[keep] / M


@dataclass(frozen=True)
class OuterBox:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(c) for c in self.lo)
        hi = tuple(float(c) for c in self.hi)
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"box bounds cross: {lo} > {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def contains(self, points, inflate: float = 0.0) -> np.ndarray:
        points = np.atleast_2d(points)
        lo = np.asarray(self.lo) - inflate
        hi = np.asarray(self.hi) + inflate
        return np.all((points >= lo) & (points <= hi), axis=1)

    @property
    def half_widths(self) -> np.ndarray:
        return (np.asarray(self.hi) - np.asarray(self.lo)) / 2


@dataclass
class NodeResult:
    """Classification of one grid node together with its evidence.

    ``control`` is the winning decision vector; ``best_value`` is the
    objective value it achieves, ``mismatch`` and ``regularizer`` its parts.
    """

    index: int
    point: tuple
    member: bool
    best_value: float
    mismatch: float
    regularizer: float
    control: list
    run_values: list
    run_methods: list
    evaluations: int


@dataclass
class Estimation:
    kind: str
    anchor: tuple
    T: float
    d_mult: float
    grid: GridSpec
    params: SystemParams
    regularizer: RegularizerSpec
    box: Optional[OuterBox]
    nodes: list = field(default_factory=list)

    @property
    def members(self) -> list:
        return [r for r in self.nodes if r.member]

    @property
    def member_indices(self) -> set:
        return {r.index for r in self.nodes if r.member}

    def member_points(self) -> np.ndarray:
        pts = [r.point for r in self.members]
        return np.array(pts, dtype=float).reshape(-1, 3)


class MemoryStore:
    """Holds stage boxes and node results; persistent stores share this API."""

    def __init__(self):
        self.boxes = {}
        self.nodes = {}

    def get_box(self, stage: int):
        return self.boxes.get(stage, KeyError)

    def put_box(self, stage: int, box: Optional[OuterBox]) -> None:
        self.boxes[stage] = box

    def get_node(self, stage: int, index: int) -> Optional[NodeResult]:
        return self.nodes.get((stage, index))

    def put_node(self, stage: int, result: NodeResult) -> None:
        self.nodes[(stage, result.index)] = result


def _control_bounds(box: ControlBox) -> np.ndarray:
    if box.Nv != box.Nn:
        raise ValueError("estimation requires equal coherent and incoherent step counts")
    return box.bounds()


def _run(problem, bounds, opt: OptimizerConfig, policy: RetryPolicy, seed: int) -> OptResult:
    return multi_run(
        problem,
        bounds,
        replace(opt, seed=seed),
        methods=policy.methods,
        runs_per_method=policy.runs_per_method,
        zero_tol=policy.zero_tol,
        nonnegative=problem.nonnegative,
        vectorized=True,
    )


def outer_box_rs(
    x0,
    T: float,
    box: ControlBox,
    params: SystemParams = SystemParams(),
    reg: Optional[RegularizerSpec] = None,
    opt: OptimizerConfig = OptimizerConfig(),
    policy: RetryPolicy = RetryPolicy(),
) -> OuterBox:
    """Bounding box of the endpoints from six coordinate extremizations.

    Every optimal endpoint found is itself reachable, so each bound is taken
    over all six endpoints; bounds are clipped to ``[-1, 1]``.
    """
    bounds = _control_bounds(box)
    reg = reg or RegularizerSpec()
    ends = []
    for k, a in enumerate(AXIS_DIRECTIONS):
        problem = BoxProblem(x0, a, T, box.Nv, params=params, regularizer=reg)
        res = _run(problem, bounds, opt, policy, mix_seed(opt.seed, 7919, k))
        ends.append(problem.terms(res.x)[0][0])
    ends = np.array(ends)
    lo = np.clip(ends.min(axis=0), -1, 1)
    hi = np.clip(ends.max(axis=0), -1, 1)
    return OuterBox(tuple(lo), tuple(hi))


class _FeasibleTracker:
    """Wraps a CS box problem and remembers the best feasible start seen.

    The penalised optimum can sit just outside the feasible set, while
    feasible starts that are nearly as extreme were evaluated on the way.
    """

    def __init__(self, problem: CsBoxProblem, direction: np.ndarray, tol: float):
        self.problem = problem
        self.direction = direction
        self.tol = tol
        self.nonnegative = problem.nonnegative
        self.best = None
        self._best_score = np.inf

    def offer(self, start) -> None:
        score = float(self.direction @ start)
        if score < self._best_score:
            self._best_score = score
            self.best = np.array(start, dtype=float)

    def __call__(self, z):
        single = np.ndim(z) == 1
        start, inner, mis = self.problem.terms(z)
        pr = self.problem
        raw = pr.beta_x0 * inner + pr.beta_xT * mis
        ok = np.flatnonzero(np.isfinite(raw) & (mis <= self.tol))
        if ok.size:
            self.offer(start[ok[np.argmin(inner[ok])]])
        values = _finite(raw)
        return float(values[0]) if single else values


def outer_box_cs(
    x_target,
    T: float,
    box: ControlBox,
    grid: GridSpec = GridSpec(),
    params: SystemParams = SystemParams(),
    opt: OptimizerConfig = OptimizerConfig(),
    policy: RetryPolicy = RetryPolicy(),
    beta_x0: float = 1.0,
    beta_xT: float = 100.0,
    attempts: int = 3,
) -> Optional[OuterBox]:
    """Bounding box of initial states that reach ``x_target`` within ``delta``.

    A coordinate is taken from the most extreme evaluated start whose
    endpoint actually lands within tolerance; if none was seen the endpoint
    weight is raised tenfold and the direction is solved again. Returns ``None`` when some direction
    never yields a feasible initial state.
    """
    bounds = _control_bounds(box)
    spec = grid.mismatch_spec()
    starts = []
    for k, a in enumerate(AXIS_DIRECTIONS):
        found = None
        for attempt in range(attempts):
            problem = CsBoxProblem(
                x_target, a, T, box.Nv, params=params, mismatch=spec,
                beta_x0=beta_x0, beta_xT=beta_xT * 10**attempt,
            )
            tracker = _FeasibleTracker(problem, np.asarray(a, float), policy.zero_tol)
            seed = mix_seed(opt.seed, 7907, k, attempt)
            res = _run(tracker, problem.bounds(bounds), opt, policy, seed)
            start, _, mis = problem.terms(res.x)
            if mis[0] <= policy.zero_tol:
                tracker.offer(start[0])
            if tracker.best is not None:
                found = tracker.best
                break
        if found is None:
            return None
        starts.append(found)
    starts = np.array(starts)
    return OuterBox(tuple(starts.min(axis=0)), tuple(starts.max(axis=0)))


def _node_problem(kind, point, anchor, T, box, params, reg, spec) -> NodeProblem:
    if kind == "rs":
        return NodeProblem(anchor, point, T, box.Nv, params=params, mismatch=spec, regularizer=reg)
    return NodeProblem.controllability(
        point, anchor, T, box.Nv, params=params, mismatch=spec, regularizer=reg
    )


def _solve_node(task) -> NodeResult:
    kind, index, point, anchor, T, box, params, reg, spec, opt, policy, seed = task
    problem = _node_problem(kind, point, anchor, T, box, params, reg, spec)
    res = _run(problem, _control_bounds(box), opt, policy, seed)
    _, mis, regv = problem.terms(res.x)
    member = bool(mis[0] <= policy.zero_tol)
    if member and reg.kind is RegularizerKind.MAX:
        member = problem.step_excesses(res.x) == (0.0, 0.0)
    return NodeResult(
        index=int(index),
        point=tuple(float(c) for c in point),
        member=member,
        best_value=float(res.fun),
        mismatch=float(mis[0]),
        regularizer=float(regv[0]),
        control=[float(c) for c in res.x],
        run_values=[float(v) for v in res.run_values],
        run_methods=list(res.run_methods),
        evaluations=int(res.nfev),
    )


def _pointwise(
    kind: str,
    anchor,
    T: float,
    box: ControlBox,
    grid: GridSpec,
    params: SystemParams,
    reg: Optional[RegularizerSpec],
    opt: OptimizerConfig,
    policy: RetryPolicy,
    candidates: Optional[Sequence[int]],
    outer: Optional[OuterBox],
    workers: int,
    store,
    stage: int,
) -> Estimation:
    reg = reg or RegularizerSpec()
    reg.check_box(box)
    anchor = tuple(float(c) for c in anchor)
    nodes = build_grid(grid.M)
    if candidates is None:
        candidates = range(len(nodes))
    candidates = sorted(int(i) for i in candidates)
    if outer is not None:
        inside = outer.contains(nodes[candidates], inflate=grid.delta) if candidates else []
        candidates = [i for i, ok in zip(candidates, inside) if ok]
    est = Estimation(kind, anchor, T, box.d_mult, grid, params, reg, outer)
    store = store if store is not None else MemoryStore()
    spec = grid.mismatch_spec()
    stage_seed = mix_seed(opt.seed, stage)

    results = {}
    tasks = []
    for i in candidates:
        prior = store.get_node(stage, i)
        if prior is not None:
            results[i] = prior
            continue
        tasks.append(
            (kind, i, tuple(nodes[i]), anchor, T, box, params, reg, spec, opt, policy,
             mix_seed(stage_seed, i))
        )
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for res in pool.map(_solve_node, tasks, chunksize=1):
                store.put_node(stage, res)
                results[res.index] = res
    else:
        for task in tasks:
            res = _solve_node(task)
            store.put_node(stage, res)
            results[res.index] = res
    est.nodes = [results[i] for i in candidates]
    return est


def pointwise_rs(
    x0,
    T: float,
    box: ControlBox,
    grid: GridSpec = GridSpec(),
    params: SystemParams = SystemParams(),
    reg: Optional[RegularizerSpec] = None,
    opt: OptimizerConfig = OptimizerConfig(),
    policy: RetryPolicy = RetryPolicy(),
    candidates: Optional[Sequence[int]] = None,
    outer: Optional[OuterBox] = None,
    workers: int = 1,
    store=None,
    stage: int = 0,
) -> Estimation:
    """Classify grid nodes as reachable from ``x0`` at time ``T``.

    Candidates default to all grid nodes; when ``outer`` is given only nodes
    inside it (inflated by the tolerance) are examined.
    """
    return _pointwise(
        "rs", x0, T, box, grid, params, reg, opt, policy, candidates, outer, workers, store, stage
    )


def pointwise_cs(
    x_target,
    T: float,
    box: ControlBox,
    grid: GridSpec = GridSpec(),
    params: SystemParams = SystemParams(),
    reg: Optional[RegularizerSpec] = None,
    opt: OptimizerConfig = OptimizerConfig(),
    policy: RetryPolicy = RetryPolicy(),
    candidates: Optional[Sequence[int]] = None,
    outer: Optional[OuterBox] = None,
    workers: int = 1,
    store=None,
    stage: int = 0,
) -> Estimation:
    """Classify grid nodes as initial states that can be steered to ``x_target``."""
    return _pointwise(
        "cs", x_target, T, box, grid, params, reg, opt, policy, candidates, outer, workers, store, stage
    )


def sweep(
    kind: str,
    anchor,
    T: float,
    base_box: ControlBox,
    multipliers: Sequence[float],
    grid: GridSpec = GridSpec(),
    params: SystemParams = SystemParams(),
    reg: Optional[RegularizerSpec] = None,
    opt: OptimizerConfig = OptimizerConfig(),
    policy: RetryPolicy = RetryPolicy(),
    workers: int = 1,
    store=None,
    candidates: Optional[Sequence[int]] = None,
    use_outer_box: bool = True,
    cs_weights: tuple = (1.0, 100.0),
) -> list:
    """Estimations for a decreasing sequence of control-box multipliers.

    Stage ``q`` only examines the members of stage ``q - 1`` that lie in its
    own outer box, so member sets are nested along the sweep. ``candidates``
    optionally restricts the first stage.
    """
    if kind not in ("rs", "cs"):
        raise ValueError(f"kind must be 'rs' or 'cs', got {kind!r}")
    mults = list(multipliers)
    if any(b >= a for a, b in zip(mults, mults[1:])):
        raise ValueError("multipliers must be strictly decreasing")
    store = store if store is not None else MemoryStore()
    reg = reg or RegularizerSpec()
    out = []
    prev = None if candidates is None else sorted(int(i) for i in candidates)
    for q, d in enumerate(mults):
        box = scaled_box(base_box, d)
        if prev is not None and not prev:
            out.append(Estimation(kind, tuple(anchor), T, box.d_mult, grid, params, reg, None))
            continue
        outer = None
        if use_outer_box:
            outer = store.get_box(q)
            if outer is KeyError:
                stage_opt = replace(opt, seed=mix_seed(opt.seed, 104729, q))
                if kind == "rs":
                    outer = outer_box_rs(anchor, T, box, params, None, stage_opt, policy)
                else:
                    outer = outer_box_cs(
                        anchor, T, box, grid, params, stage_opt, policy,
                        beta_x0=cs_weights[0], beta_xT=cs_weights[1],
                    )
                store.put_box(q, outer)
            if outer is None:
                out.append(Estimation(kind, tuple(anchor), T, box.d_mult, grid, params, reg, None))
                prev = []
                continue
        fn = pointwise_rs if kind == "rs" else pointwise_cs
        est = fn(
            anchor, T, box, grid, params, reg, opt, policy,
            candidates=prev, outer=outer, workers=workers, store=store, stage=q,
        )
        out.append(est)
        prev = sorted(est.member_indices)
    return out


def metrics(est: Estimation, anchor=None) -> dict:
    """Volume, ball fraction, member count and farthest member distance."""
    anchor = np.asarray(est.anchor if anchor is None else anchor, dtype=float)
    pts = est.member_points()
    volume = len(pts) * 8.0 / est.grid.M**3
    farthest = float(np.sqrt(((pts - anchor) ** 2).sum(axis=1)).max()) if len(pts) else None
    return {
        "member_count": len(pts),
        "candidate_count": len(est.nodes),
        "volume": volume,
        "volume_fraction": volume / BALL_VOLUME,
        "farthest_distance": farthest,
    }


def replay_value(
    kind: str,
    anchor,
    T: float,
    box: ControlBox,
    grid: GridSpec,
    params: SystemParams,
    reg: Optional[RegularizerSpec],
    node: NodeResult,
) -> float:
    """Objective value of the stored winning control, recomputed from scratch."""
    reg = reg or RegularizerSpec()
    problem = _node_problem(kind, node.point, anchor, T, box, params, reg, grid.mismatch_spec())
    return float(problem(np.asarray(node.control)))

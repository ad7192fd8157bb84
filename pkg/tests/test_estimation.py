import itertools
import math
from dataclasses import replace

import numpy as np
import pytest

from blochreach import estimation
from blochreach.controls import ControlBox, RegularizerSpec, scaled_box
from blochreach.dynamics import SystemParams, propagate_endpoints
from blochreach.estimation import (
    Estimation,
    GridSpec,
    NodeResult,
    OuterBox,
    build_grid,
    metrics,
    outer_box_cs,
    outer_box_rs,
    pointwise_cs,
    pointwise_rs,
    replay_value,
    sweep,
)
from blochreach.objectives import MismatchSpec, mismatch
from blochreach.optimize import OptimizerConfig, OptResult

SMALL = ControlBox(Nv=4, Nn=4)
FAST = OptimizerConfig(budget=3000, seed=7)
PARAMS = SystemParams()


def node_index(grid_pts, point):
    return int(np.flatnonzero(np.all(np.isclose(grid_pts, point), axis=1))[0])


class TestGrid:
    def test_cardinality(self):
        assert len(build_grid(20)) == 4169

    def test_m2_by_enumeration(self):
        pts = [np.array(p) for p in itertools.product([-1.0, 0.0, 1.0], repeat=3)]
        want = sorted(tuple(p) for p in pts if p @ p <= 1)
        got = build_grid(2)
        assert len(got) == 7 and sorted(map(tuple, got)) == want

    @pytest.mark.parametrize("M", [1, 3, 7, 10, 20])
    def test_inside_ball_and_ordered(self, M):
        g = build_grid(M)
        assert np.all((g**2).sum(axis=1) <= 1 + 1e-12)
        idx = np.rint((g + 1) * M / 2).astype(int)
        assert [tuple(r) for r in idx] == sorted(tuple(r) for r in idx)

    def test_deterministic(self):
        assert build_grid(20).tobytes() == build_grid(20).tobytes()

    def test_spec(self):
        g = GridSpec(M=20, z=2)
        assert g.eps == 0.05 and g.delta == 0.025 and GridSpec(M=20).cube_volume == 0.001
        with pytest.raises(ValueError):
            GridSpec(M=0)
        with pytest.raises(ValueError):
            GridSpec(z=0.5)


def test_outer_box_contains():
    box = OuterBox((0, 0, 0), (0.5, 0.5, 0.5))
    assert box.contains([[0.25, 0.25, 0.25], [0.6, 0, 0]]).tolist() == [True, False]
    assert box.contains([0.55, 0, 0], inflate=0.05).tolist() == [True]
    with pytest.raises(ValueError):
        OuterBox((1, 0, 0), (0, 0, 0))


def _est(points, M=20, anchor=(0, 0, 0)):
    nodes = [NodeResult(i, tuple(p), True, 0.0, 0.0, 0.0, [], [], [], 0) for i, p in enumerate(points)]
    return Estimation("rs", anchor, 1.0, 1.0, GridSpec(M=M), PARAMS, RegularizerSpec(), None, nodes)


class TestMetrics:
    def test_one_member(self):
        m = metrics(_est([(0.5, 0, 0)]))
        assert m["volume"] == 0.001 and m["farthest_distance"] == 0.5

    def test_full_grid(self):
        m = metrics(_est(build_grid(20)))
        assert m["member_count"] == 4169
        assert math.isclose(m["volume_fraction"], 4.169 / (4 * math.pi / 3))
        assert 0.99 < m["volume_fraction"] < 1.0

    def test_empty(self):
        m = metrics(_est([]))
        assert m["volume"] == 0 and m["farthest_distance"] is None


class TestOuterBoxRs:
    def test_short_horizon(self):
        ob = outer_box_rs((0.3, 0.2, 0.1), 1e-6, ControlBox(), PARAMS, opt=FAST)
        # drift over 1e-6 moves every endpoint slightly, so x0 itself is only
        # within the box up to that motion
        assert np.all(ob.half_widths <= 1e-4)
        assert ob.contains([0.3, 0.2, 0.1], inflate=1e-4).all()

    def test_pole_keeps_top(self):
        ob = outer_box_rs((0, 0, 1), 5.0, SMALL, PARAMS, opt=OptimizerConfig(seed=1))
        assert ob.hi[2] >= 1 - 1e-3

    def test_contains_sampled_endpoints(self):
        # each bound is a minimum over endpoints, so random endpoints mostly fall
        # inside; allow the optimizer a little slack
        ob = outer_box_rs((0.5, 0, 0), 5.0, SMALL, PARAMS, opt=OptimizerConfig(seed=2))
        rng = np.random.default_rng(0)
        b = SMALL.bounds()
        z = b[:, 0] + rng.random((2000, 8)) * (b[:, 1] - b[:, 0])
        ends = propagate_endpoints((0.5, 0, 0), z[:, :4], z[:, 4:], 5.0, PARAMS)
        assert ob.contains(ends, inflate=0.02).all()


class TestPointwiseRs:
    def test_fixed_point_member_in_small_box(self):
        box = scaled_box(ControlBox(), 0.05)
        g = build_grid(20)
        i = node_index(g, (0, 0, 1))
        est = pointwise_rs((0, 0, 1), 5.0, box, GridSpec(20), PARAMS, opt=FAST, candidates=[i])
        assert est.nodes[0].member and est.nodes[0].best_value == 0

    def test_far_node_unreachable(self):
        box = scaled_box(ControlBox(Nv=4, Nn=4), 0.05)
        grid = GridSpec(20)
        target = np.array([0.0, 0.0, 0.0])
        # brute-force: no sampled control gets within delta
        rng = np.random.default_rng(0)
        b = box.bounds()
        z = b[:, 0] + rng.random((100_000, 8)) * (b[:, 1] - b[:, 0])
        ends = propagate_endpoints((0, 0, 1), z[:, :4], z[:, 4:], 0.5, PARAMS)
        assert mismatch(ends, target, grid.mismatch_spec()).min() > 0
        i = node_index(build_grid(20), target)
        est = pointwise_rs((0, 0, 1), 0.5, box, grid, PARAMS, opt=FAST, candidates=[i])
        assert not est.nodes[0].member and est.nodes[0].best_value > 0
        assert len(est.nodes[0].run_values) == 4

    def test_members_recheck_and_replay(self):
        grid = GridSpec(4)
        est = pointwise_rs((0, 0, 1), 5.0, SMALL, grid, PARAMS, opt=FAST)
        assert len(est.nodes) == len(build_grid(4)) and est.members
        for r in est.members:
            u = np.asarray(r.control)
            end = propagate_endpoints((0, 0, 1), u[:4], u[4:], 5.0, PARAMS)
            assert mismatch(end, r.point, grid.mismatch_spec())[0] <= 1e-12
            assert replay_value("rs", (0, 0, 1), 5.0, SMALL, grid, PARAMS, None, r) == r.best_value

    def test_outer_box_filters_candidates(self):
        outer = OuterBox((-0.1, -0.1, 0.4), (0.1, 0.1, 1.0))
        est = pointwise_rs((0, 0, 1), 5.0, SMALL, GridSpec(4), PARAMS, opt=FAST, outer=outer)
        pts = np.array([r.point for r in est.nodes])
        assert outer.contains(pts, inflate=0.25).all()
        assert len(pts) == 2  # (0, 0, 0.5) and (0, 0, 1)

    def test_order_and_workers_do_not_matter(self):
        grid = GridSpec(4)
        one = pointwise_rs((0.5, 0, 0), 3.0, SMALL, grid, PARAMS, opt=FAST, candidates=[3, 10, 20])
        two = pointwise_rs((0.5, 0, 0), 3.0, SMALL, grid, PARAMS, opt=FAST, candidates=[20, 10, 3], workers=2)
        alone = pointwise_rs((0.5, 0, 0), 3.0, SMALL, grid, PARAMS, opt=FAST, candidates=[10])
        assert [r.index for r in two.nodes] == [3, 10, 20]
        assert [(r.member, r.best_value, r.control) for r in one.nodes] == [
            (r.member, r.best_value, r.control) for r in two.nodes
        ]
        assert alone.nodes[0].control == one.nodes[1].control

    def test_max_step_membership_needs_zero_excess(self, monkeypatch):
        # the endpoint of u = 0 stays at the pole, but the incoherent channel
        # jumps by 0.6 > 0.5 at the last step while keeping the endpoint within
        # delta: the node must be rejected
        control = np.r_[np.zeros(10), np.zeros(9), 0.6]

        def fake(problem, *args, **kwargs):
            return OptResult(control, float(problem(control)), 1, 1, False, [0.0], ["DE"])

        monkeypatch.setattr(estimation, "multi_run", fake)
        reg = RegularizerSpec("max", beta_xT=36, delta_v=10, delta_n=0.5)
        i = node_index(build_grid(20), (0, 0, 1))
        est = pointwise_rs((0, 0, 1), 5.0, ControlBox(), GridSpec(20), PARAMS, reg, FAST, candidates=[i])
        r = est.nodes[0]
        assert r.mismatch == 0 and r.regularizer > 0 and not r.member


class TestCs:
    def test_outer_box_is_valid(self):
        ob = outer_box_cs((0, 0, 1), 5.0, SMALL, GridSpec(20), PARAMS, OptimizerConfig(budget=15_000, seed=3))
        assert ob is not None
        assert np.all(np.array(ob.lo) <= ob.hi) and np.all(np.abs(ob.lo + ob.hi) <= 2)

    def test_outer_box_keeps_best_feasible_start(self, monkeypatch):
        # the optimizer reports an infeasible point, but the pole with zero
        # controls was evaluated along the way and is feasible for every face
        def fake(problem, bounds, *args, **kwargs):
            pole = np.r_[0.0, 0.0, 1.0, np.zeros(len(bounds) - 3)]
            bad = np.r_[0.0, 0.0, -1.0, np.zeros(len(bounds) - 3)]
            problem(np.vstack([pole, bad]))
            return OptResult(bad, float(problem(bad)), 2, 1, False, [0.0], ["DE"])

        monkeypatch.setattr(estimation, "multi_run", fake)
        ob = outer_box_cs((0, 0, 1), 5.0, SMALL, GridSpec(20), PARAMS, FAST)
        assert ob.lo == (0, 0, 1) and ob.hi == (0, 0, 1)

    def test_pole_member(self):
        i = node_index(build_grid(20), (0, 0, 1))
        # the DE runs rarely land on the pole; the annealing retries do
        est = pointwise_cs((0, 0, 1), 5.0, ControlBox(), GridSpec(20), PARAMS, opt=OptimizerConfig(seed=7), candidates=[i])
        assert est.kind == "cs" and est.nodes[0].member

    def test_infeasible_box_is_empty(self, monkeypatch):
        def fake(problem, bounds, *args, **kwargs):
            z = np.r_[0.0, 0.0, -1.0, np.zeros(len(bounds) - 3)]
            return OptResult(z, float(problem(z)), 1, 1, False, [0.0], ["DE"])

        monkeypatch.setattr(estimation, "multi_run", fake)
        assert outer_box_cs((0, 0, 1), 5.0, SMALL, GridSpec(20), PARAMS, FAST) is None
        ests = sweep("cs", (0, 0, 1), 5.0, SMALL, [1.0, 0.5], GridSpec(4), PARAMS, opt=FAST)
        assert all(e.box is None and not e.nodes for e in ests)


class TestSweep:
    def test_nested(self):
        ests = sweep("rs", (0, 0, 1), 5.0, SMALL, [1.0, 0.4, 0.1], GridSpec(4), PARAMS, opt=FAST)
        assert [e.d_mult for e in ests] == [1.0, 0.4, 0.1]
        sets = [e.member_indices for e in ests]
        assert sets[1] <= sets[0] and sets[2] <= sets[1]
        for e in ests:
            pts = e.member_points()
            assert e.box.contains(pts, inflate=GridSpec(4).delta).all()
        assert {r.index for r in ests[1].nodes} <= sets[0]

    def test_single_multiplier_is_pointwise(self):
        (s,) = sweep("rs", (0.5, 0, 0), 2.0, SMALL, [1.0], GridSpec(4), PARAMS, opt=FAST)
        stage_opt = replace(FAST, seed=estimation.mix_seed(FAST.seed, 104729, 0))
        outer = outer_box_rs((0.5, 0, 0), 2.0, SMALL, PARAMS, None, stage_opt)
        p = pointwise_rs((0.5, 0, 0), 2.0, SMALL, GridSpec(4), PARAMS, opt=FAST, outer=outer)
        assert s.box == outer
        assert [(r.index, r.member, r.best_value) for r in s.nodes] == [
            (r.index, r.member, r.best_value) for r in p.nodes
        ]

    def test_empty_stage_stops_later_stages(self):
        ests = sweep("rs", (0, 0, 1), 5.0, SMALL, [1.0, 0.5, 0.2], GridSpec(4), PARAMS, opt=FAST, candidates=[])
        assert all(not e.nodes and e.box is None for e in ests)

    def test_rejects_bad_multipliers(self):
        with pytest.raises(ValueError):
            sweep("rs", (0, 0, 1), 5.0, SMALL, [0.4, 1.0])
        with pytest.raises(ValueError):
            sweep("xs", (0, 0, 1), 5.0, SMALL, [1.0])

    def test_store_resumes(self, monkeypatch):
        store = estimation.MemoryStore()
        a = sweep("rs", (0, 0, 1), 5.0, SMALL, [1.0, 0.5], GridSpec(4), PARAMS, opt=FAST, store=store)

        def no_solving(*args, **kwargs):
            raise AssertionError("stored results should be reused")

        monkeypatch.setattr(estimation, "_solve_node", no_solving)
        monkeypatch.setattr(estimation, "multi_run", no_solving)
        b = sweep("rs", (0, 0, 1), 5.0, SMALL, [1.0, 0.5], GridSpec(4), PARAMS, opt=FAST, store=store)
        assert [e.member_indices for e in a] == [e.member_indices for e in b]

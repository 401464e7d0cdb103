"""
Tests for two-stage evaluation and the detailed-routing proxy.
"""
import itertools
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.python.benchmark_io import load_benchmark
from src.python.errors import MissingRouteError, ResourceLimitExceeded
from src.python.evaluate import (
    Design,
    EvalStatus,
    FakeClock,
    QorRecord,
    ResourceGuard,
    ResourceLimits,
    corridor_cells,
    dr_proxy,
    evaluate,
    evaluation_runner,
    refine_net,
    run_flow,
)
from src.python.grid import Net, QorVector, RouteTree, overflow
from src.python.router import GlobalRouter, route_all
from src.python.strategy import baseline_strategy
from tests.conftest import make_grid


class TestQorRecord:
    """Status and QoR presence go together."""

    def test_ok_requires_qor(self):
        with pytest.raises(ValueError):
            QorRecord(candidate_id="x", status=EvalStatus.OK)

    def test_failure_has_no_qor(self):
        with pytest.raises(ValueError):
            QorRecord(candidate_id="x", status=EvalStatus.INFEASIBLE, qor=QorVector())

    def test_stamped(self):
        record = QorRecord(candidate_id="", status=EvalStatus.BUILD_ERROR, note="bad")
        stamped = record.stamped("abc", 3, repair_attempts=2)
        assert (stamped.candidate_id, stamped.iteration, stamped.repair_attempts, stamped.note) == ("abc", 3, 2, "bad")


class TestFakeClock:
    def test_advances_per_reading(self):
        clock = FakeClock(step=0.5)
        assert [clock.now(), clock.now(), clock.now()] == [0.0, 0.5, 1.0]


class TestDetailProxy:
    """Corridor rerouting on the refined lattice."""

    def test_refine_net_scales_pins(self):
        assert refine_net(Net("a", ((1, 2, 0), (3, 0, 1))), 2).pins == ((2, 4, 0), (6, 0, 1))

    def test_corridor_cells(self):
        tree = RouteTree(root=(0, 0, 0), edges=frozenset([((0, 0, 0), (1, 0, 0))]))
        cells = corridor_cells(tree, 2, 0, (4, 4))
        assert cells == {(x, y) for x in range(4) for y in range(2)}
        widened = corridor_cells(tree, 1, 1, (4, 4))
        assert widened == {(x, y) for x in range(3) for y in range(2)}

    def test_requires_routes(self, grid, nets):
        with pytest.raises(MissingRouteError):
            dr_proxy(grid, nets)

    def test_routes_inside_corridor(self, grid, nets, baseline):
        routed = route_all(baseline, grid, nets)
        detail = dr_proxy(grid, routed.nets, expansion=2, slack=1)
        assert detail.grid.dims == (8, 8, 2)
        assert detail.unrouted == []
        guides = {n.id: n.route for n in routed.nets}
        for net in detail.nets:
            assert net.route.is_valid_for(net.unique_pins())
            allowed = corridor_cells(guides[net.id], 2, 3, (4, 4))
            assert {(x, y) for x, y, _ in net.route.nodes()} <= allowed

    def test_invalid_parameters(self, grid, nets, baseline):
        routed = route_all(baseline, grid, nets)
        with pytest.raises(ValueError):
            dr_proxy(grid, routed.nets, expansion=0)
        with pytest.raises(ValueError):
            dr_proxy(grid, routed.nets, slack=-1)


class TestEvaluate:
    """Candidate faults become statuses, never exceptions."""

    def test_baseline_ok(self, small_design, baseline_doc, fake_clock):
        record = evaluate(baseline_doc, small_design, fake_clock, candidate_id="b")
        assert record.status is EvalStatus.OK
        qor = record.qor
        assert qor.to == 0
        assert qor.dr_wl > 0 and qor.gr_wl > 0
        assert qor.gr_twl == pytest.approx(qor.gr_wl + qor.gr_vc, rel=1e-9)
        assert qor.dr_twl == pytest.approx(qor.dr_wl + qor.dr_vc, rel=1e-9)
        # four clock readings, one second apart
        assert (qor.gr_rt, qor.dr_rt) == (1.0, 1.0)

    def test_design_grid_untouched(self, small_design, baseline_doc, fake_clock):
        evaluate(baseline_doc, small_design, fake_clock)
        assert small_design.grid.demand.sum() == 0
        assert small_design.grid.routes == {}

    def test_build_error(self, small_design, fake_clock):
        record = evaluate("cost = nonsense\n", small_design, fake_clock, candidate_id="x", iteration=4)
        assert record.status is EvalStatus.BUILD_ERROR
        assert record.qor is None
        assert record.iteration == 4

    def test_run_error_on_crash(self, small_design, baseline, fake_clock, monkeypatch):
        def explode(*args, **kwargs):
            raise RuntimeError("boom")

        monkeypatch.setattr("src.python.evaluate.dr_proxy", explode)
        record = evaluate(baseline, small_design, fake_clock)
        assert record.status is EvalStatus.RUN_ERROR
        assert "boom" in record.note

    def test_time_limit(self, small_design, baseline):
        record = evaluate(baseline, small_design, FakeClock(step=10.0), limits=ResourceLimits(time_limit_s=5.0))
        assert record.status is EvalStatus.RUN_ERROR
        assert "time limit" in record.note

    def test_memory_limit(self, small_design, baseline, fake_clock):
        record = evaluate(baseline, small_design, fake_clock, limits=ResourceLimits(memory_limit_mb=1e-3))
        assert record.status is EvalStatus.RUN_ERROR
        assert "memory limit" in record.note

    def test_infeasible_on_capacity_shortage(self, overfull_path, baseline_doc, fake_clock):
        design = load_benchmark(overfull_path).to_design()
        record = evaluate(baseline_doc, design, fake_clock)
        assert record.status is EvalStatus.INFEASIBLE
        assert record.qor is None

    def test_runner_uses_fresh_clock(self, small_design, baseline_doc):
        run = evaluation_runner(small_design, clock_factory=lambda: FakeClock(0.25))
        first = run(baseline_doc, candidate_id="a", iteration=0)
        second = run(baseline_doc, candidate_id="a", iteration=0)
        assert first == second
        assert first.qor.gr_rt == 0.25

    def test_flow_exposes_routes(self, small_design, baseline):
        flow = run_flow(baseline, small_design, FakeClock())
        assert all(n.route is not None for n in flow.nets)
        assert flow.feasible
        assert overflow(flow.grid) == (0, 0)



def evaluate_nets(nets, strategy, capacity=2):
    """Evaluate nets on a 6x6 two-layer grid with 10x10 tiles."""
    design = Design(name="unit", grid=make_grid(6, 6, capacity=capacity), nets=tuple(nets))
    return evaluate(strategy, design, FakeClock())


two_pin_nets = st.lists(
    st.tuples(st.integers(0, 5), st.integers(0, 5), st.integers(0, 5), st.integers(0, 5)).filter(
        lambda s: s[:2] != s[2:]
    ),
    min_size=1,
    max_size=4,
)


class TestDetailIdentities:
    """Refinement keeps trivial nets unchanged and never shortens a route."""

    def test_straight_net_keeps_wirelength(self, baseline):
        record = evaluate_nets([Net("a", ((0, 2, 0), (5, 2, 0)))], baseline)
        assert record.ok
        assert record.qor.gr_wl == 50.0
        assert record.qor.dr_wl == record.qor.gr_wl
        assert record.qor.dr_vc == record.qor.gr_vc == 0

    def test_via_stack_keeps_via_count(self, baseline):
        record = evaluate_nets([Net("v", ((2, 2, 0), (2, 2, 1)))], baseline)
        assert record.ok
        assert record.qor.gr_wl == record.qor.dr_wl == 0.0
        assert record.qor.gr_vc == record.qor.dr_vc == 1

    def test_straight_and_via_nets_together(self, baseline):
        record = evaluate_nets([Net("a", ((0, 2, 0), (5, 2, 0))), Net("v", ((2, 4, 0), (2, 4, 1)))], baseline)
        assert record.ok
        assert (record.qor.gr_wl, record.qor.gr_vc) == (50.0, 1)
        assert (record.qor.dr_wl, record.qor.dr_vc) == (50.0, 1)

    @settings(max_examples=25, deadline=None)
    @given(two_pin_nets)
    def test_refinement_never_shortens(self, segments):
        nets = [Net(f"n{i}", ((x1, y1, 0), (x2, y2, 0))) for i, (x1, y1, x2, y2) in enumerate(segments)]
        record = evaluate_nets(nets, baseline_strategy(), capacity=8)
        assert record.ok
        assert record.qor.dr_wl >= record.qor.gr_wl - 1e-9

    def test_full_soft_reserve_on_tight_design(self, overfull_path, baseline):
        design = load_benchmark(overfull_path).to_design()
        strategy = replace(baseline, soft_reserve=1.0)
        flow = run_flow(strategy, design, FakeClock())
        assert flow.dr_overflow > 0 or flow.detail.unrouted
        record = evaluate(strategy, design, FakeClock())
        assert record.status is EvalStatus.INFEASIBLE
        assert "dr overflow" in record.note


class TestResourceGuard:
    """Ceilings are enforced while routing, not after it."""

    def test_no_limits(self):
        ResourceGuard(ResourceLimits(time_limit_s=None, memory_limit_mb=None))()

    def test_time_ceiling(self):
        readings = iter([0.0, 1.0, 5.0])
        guard = ResourceGuard(ResourceLimits(time_limit_s=2.0), timer=lambda: next(readings))
        guard()
        with pytest.raises(ResourceLimitExceeded, match="time limit"):
            guard()

    def test_memory_ceiling(self):
        guard = ResourceGuard(ResourceLimits(time_limit_s=None, memory_limit_mb=1e-3))
        with pytest.raises(ResourceLimitExceeded, match="memory limit"):
            guard()

    def test_router_checks_before_every_net(self, grid, nets, baseline):
        calls = []
        GlobalRouter(baseline, grid, guard=lambda: calls.append(1)).route_all(nets)
        assert len(calls) >= len(nets)

    def test_router_stops_when_guard_raises(self, grid, nets, baseline):
        calls = []

        def guard():
            calls.append(1)
            if len(calls) == 2:
                raise ResourceLimitExceeded("stop")

        with pytest.raises(ResourceLimitExceeded):
            GlobalRouter(baseline, grid, guard=guard).route_all(nets)
        assert len(calls) == 2

    def test_evaluation_aborted_mid_route(self, overfull_path, baseline_doc, monkeypatch):
        readings = itertools.count()
        monkeypatch.setattr("src.python.evaluate.monotonic", lambda: float(next(readings)))
        design = load_benchmark(overfull_path).to_design()
        record = evaluate(baseline_doc, design, FakeClock(), limits=ResourceLimits(time_limit_s=2.0))
        assert record.status is EvalStatus.RUN_ERROR
        assert record.note.startswith("time limit exceeded")
        # the starting reading plus three checks, one per net of the first pass
        assert next(readings) == 4

    def test_oversized_rip_up_budget_is_a_build_error(self, overfull_path, baseline_doc):
        doc = baseline_doc.replace("rrr_rounds = 8", "rrr_rounds = 100000000")
        record = evaluate(doc, load_benchmark(overfull_path).to_design(), FakeClock())
        assert record.status is EvalStatus.BUILD_ERROR
        assert "rrr_rounds" in record.note

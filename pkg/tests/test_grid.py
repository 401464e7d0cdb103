"""
Tests for the GCell lattice, route bookkeeping and QoR metrics.
"""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.python.errors import MissingRouteError, RouteStateError
from src.python.grid import (
    CapacityAdjustment,
    GcellGrid,
    LayerDirection,
    Net,
    QorVector,
    RouteTree,
    is_via,
    make_edge,
    metrics,
    overflow,
    tree_metrics,
)
from tests.conftest import make_grid


def straight_tree(y=0, x0=0, x1=3, layer=0):
    edges = [((x, y, layer), (x + 1, y, layer)) for x in range(x0, x1)]
    return RouteTree(root=(x0, y, layer), edges=frozenset(edges))


class TestLattice:
    """Edges follow layer directions; vias join adjacent layers."""

    def test_edge_count(self, grid):
        """3*4 horizontal + 4*3 vertical + 16 vias."""
        assert len(grid) == 12 + 12 + 16

    def test_wire_edges_follow_direction(self, grid):
        for (a, b) in grid.edges():
            if is_via((a, b)):
                assert a[:2] == b[:2] and b[2] == a[2] + 1
            elif grid.layer_dirs[a[2]] is LayerDirection.HORIZONTAL:
                assert a[1] == b[1] and b[0] == a[0] + 1
            else:
                assert a[0] == b[0] and b[1] == a[1] + 1

    def test_wrong_direction_edge_missing(self, grid):
        assert not grid.has_edge(((0, 0, 0), (0, 1, 0)))
        with pytest.raises(ValueError):
            grid.edge_id(((0, 0, 0), (0, 1, 0)))

    def test_edge_lengths(self):
        grid = make_grid(tile=(10.0, 20.0))
        assert grid.edge_length(((0, 0, 0), (1, 0, 0))) == 10.0
        assert grid.edge_length(((0, 0, 1), (0, 1, 1))) == 20.0
        assert grid.edge_length(((0, 0, 0), (0, 0, 1))) == 0.0

    def test_vias_unbounded_by_default(self, grid):
        assert grid.capacity_of(((1, 1, 0), (1, 1, 1))) > 10 ** 9

    def test_adjustment_applied(self):
        edge = ((1, 1, 0), (2, 1, 0))
        grid = GcellGrid(
            dims=(4, 4, 2),
            tile=(1, 1),
            layer_dirs=["horizontal", "vertical"],
            layer_capacity=[5, 5],
            adjustments=[CapacityAdjustment(edge, 1)],
        )
        assert grid.capacity_of(edge) == 1
        assert grid.capacity_of(((0, 1, 0), (1, 1, 0))) == 5

    def test_unconnectable_lattice_rejected(self):
        with pytest.raises(ValueError, match="no horizontal layer"):
            GcellGrid((3, 3, 1), (1, 1), ["vertical"], [1])
        with pytest.raises(ValueError, match="no vertical layer"):
            GcellGrid((3, 3, 1), (1, 1), ["horizontal"], [1])

    def test_negative_capacity_rejected(self):
        with pytest.raises(ValueError):
            make_grid(capacity=-1)


class TestRouteTree:
    """Tree extraction from edge unions."""

    def test_build_prunes_dangling_branch(self):
        pins = [(0, 0, 0), (2, 0, 0)]
        edges = [((0, 0, 0), (1, 0, 0)), ((1, 0, 0), (2, 0, 0)), ((2, 0, 0), (3, 0, 0))]
        tree = RouteTree.build(pins[0], edges, pins)
        assert tree.edges == frozenset(edges[:2])
        assert tree.is_valid_for(pins)

    def test_build_breaks_cycles(self):
        square = [
            ((0, 0, 0), (1, 0, 0)),
            ((0, 1, 0), (1, 1, 0)),
            ((0, 0, 0), (0, 0, 1)),
            ((0, 0, 1), (0, 1, 1)),
            ((0, 1, 0), (0, 1, 1)),
            ((1, 0, 0), (1, 0, 1)),
            ((1, 0, 1), (1, 1, 1)),
            ((1, 1, 0), (1, 1, 1)),
        ]
        pins = [(0, 0, 0), (1, 1, 0)]
        tree = RouteTree.build(pins[0], square, pins)
        assert tree.is_valid_for(pins)
        assert len(tree.edges) == len(tree.nodes()) - 1

    def test_unreachable_pin(self):
        with pytest.raises(RouteStateError):
            RouteTree.build((0, 0, 0), [((0, 0, 0), (1, 0, 0))], [(0, 0, 0), (3, 3, 0)])

    def test_single_pin_tree(self):
        tree = RouteTree.build((1, 1, 0), [], [(1, 1, 0)])
        assert tree.edges == frozenset()
        assert tree.is_valid_for([(1, 1, 0)])


class TestRouteBookkeeping:
    """Demand tracks committed routes exactly."""

    def test_commit_and_rip_up(self, grid, two_pin_net):
        tree = straight_tree()
        grid.commit_route(two_pin_net, tree)
        assert grid.demand_of(((0, 0, 0), (1, 0, 0))) == 1
        assert grid.is_routed(two_pin_net)
        grid.rip_up(two_pin_net)
        assert grid.demand.sum() == 0

    def test_double_commit_rejected(self, grid, two_pin_net):
        grid.commit_route(two_pin_net, straight_tree())
        with pytest.raises(RouteStateError):
            grid.commit_route(two_pin_net, straight_tree())

    def test_rip_up_unrouted(self, grid, two_pin_net):
        with pytest.raises(RouteStateError):
            grid.rip_up(two_pin_net)

    def test_route_of_missing(self, grid, two_pin_net):
        with pytest.raises(MissingRouteError):
            grid.route_of(two_pin_net)

    def test_snapshot_restore(self, grid, two_pin_net):
        state = grid.snapshot()
        grid.commit_route(two_pin_net, straight_tree())
        grid.restore(state)
        assert grid.demand.sum() == 0
        assert not grid.is_routed(two_pin_net)

    def test_fresh_keeps_capacity(self, grid, two_pin_net):
        edge = ((0, 0, 0), (1, 0, 0))
        grid.adjust_capacity(edge, 0)
        grid.commit_route(two_pin_net, straight_tree())
        grid.history[0] = 3.0
        clean = grid.fresh()
        assert clean.capacity_of(edge) == 0
        assert clean.demand.sum() == 0 and clean.history.sum() == 0
        assert grid.demand.sum() > 0

    def test_pin_density(self, grid):
        grid.annotate_pin_density([Net("a", ((0, 0, 0), (1, 0, 0))), Net("b", ((0, 0, 0), (3, 3, 0)))])
        assert grid.pin_density[grid.edge_id(((0, 0, 0), (1, 0, 0)))] == 1.5
        assert grid.pin_density[grid.edge_id(((2, 2, 1), (2, 3, 1)))] == 0.0


class TestMetrics:
    """Overflow, wirelength and via count."""

    def test_overflow_counts_excess(self):
        grid = make_grid(capacity=1)
        for name in "abc":
            grid.commit_route(Net(name, ((0, 0, 0), (3, 0, 0))), straight_tree())
        assert overflow(grid) == (2, 6)
        assert len(grid.overflowed()) == 3

    def test_tree_metrics_counts_vias(self, grid):
        tree = RouteTree(
            root=(0, 0, 0),
            edges=frozenset([((0, 0, 0), (1, 0, 0)), ((1, 0, 0), (1, 0, 1)), ((1, 0, 1), (1, 1, 1))]),
        )
        assert tree_metrics(grid, tree) == (20.0, 1)

    def test_metrics_needs_routes(self, grid, two_pin_net):
        with pytest.raises(MissingRouteError):
            metrics(grid, [two_pin_net])

    def test_metrics_total(self, grid, two_pin_net):
        tree = straight_tree()
        grid.commit_route(two_pin_net, tree)
        qor = metrics(grid, [two_pin_net.with_route(tree)])
        assert qor.gr_wl == 30.0
        assert qor.gr_twl == qor.gr_wl + qor.gr_vc
        assert (qor.mo, qor.to) == (0, 0)

    def test_qor_total_checked(self):
        with pytest.raises(ValueError):
            QorVector(gr_wl=10.0, gr_vc=2.0, gr_twl=11.0)

    @settings(max_examples=100, deadline=None)
    @given(st.data())
    def test_overflow_matches_recount(self, data):
        """Random routed states against an exhaustive recount."""
        nx = data.draw(st.integers(2, 5))
        ny = data.draw(st.integers(2, 5))
        cap = data.draw(st.integers(0, 2))
        grid = make_grid(nx, ny, cap)
        edges = list(grid.edges())
        routed = []
        for i in range(data.draw(st.integers(0, 6))):
            chosen = data.draw(st.sets(st.sampled_from(edges), min_size=1, max_size=6))
            tree = RouteTree(root=min(chosen)[0], edges=frozenset(chosen))
            net = Net(f"n{i}", (tree.root,))
            grid.commit_route(net, tree)
            routed.append(net.with_route(tree))

        usage = {}
        for net in routed:
            for edge in net.route.edges:
                usage[edge] = usage.get(edge, 0) + 1
        excess = [max(usage.get(e, 0) - grid.capacity_of(e), 0) for e in edges]
        assert overflow(grid) == (max(excess), sum(excess))
        assert np.array_equal(grid.recount_demand(), grid.demand)

        qor = metrics(grid, routed)
        wl = sum(grid.edge_length(e) for n in routed for e in n.route.edges)
        vc = sum(1 for n in routed for e in n.route.edges if is_via(e))
        assert qor.gr_wl == pytest.approx(wl)
        assert qor.gr_vc == vc
        assert qor.gr_twl == pytest.approx(qor.gr_wl + qor.gr_vc, rel=1e-9)


class TestRefine:
    """Detailed-routing lattice."""

    def test_dimensions_and_tile(self, grid):
        fine = grid.refine(2)
        assert fine.dims == (8, 8, 2)
        assert fine.tile == (5.0, 5.0)

    def test_capacity_split_over_tracks(self):
        grid = make_grid(capacity=3)
        fine = grid.refine(2)
        # boundary between coarse columns 0 and 1 on row 0
        assert fine.capacity_of(((1, 0, 0), (2, 0, 0))) == 2
        assert fine.capacity_of(((1, 1, 0), (2, 1, 0))) == 1

    def test_adjustment_carried(self):
        grid = make_grid(capacity=4)
        grid.adjust_capacity(((1, 0, 0), (2, 0, 0)), 0)
        fine = grid.refine(2)
        assert fine.capacity_of(((3, 0, 0), (4, 0, 0))) == 0
        assert fine.capacity_of(((3, 1, 0), (4, 1, 0))) == 0

    def test_make_edge_orders(self):
        assert make_edge((1, 0, 0), (0, 0, 0)) == ((0, 0, 0), (1, 0, 0))

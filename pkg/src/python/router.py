"""
Strategy-driven global router.

A RouterStrategy is interpreted over a GcellGrid: nets are ordered, split
into 2-pin segments (two-hub star), pattern routed, repaired by
rip-up-and-reroute over the strategy's candidate grids, and finally polished
by the post-passes (pulse, rebalance, compaction). Searches run on the 2D
projection; layers are assigned per straight run, lowest layer on ties.
"""
from __future__ import annotations

import hashlib
import heapq
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

from .errors import RouteStateError
from .grid import Edge, GcellGrid, Net, Node, Point, RouteTree, is_via, make_edge, overflow, tree_metrics
from .strategy import GridCandidate, OrderPolicy, PostPass, RouterStrategy
from .topology import Segment, half_perimeter, net_topology

logger = logging.getLogger(__name__)

PULSE_MAX_SWEEPS = 3

Corridor = Callable[[Net, int], Optional[Set[Point]]]
Guard = Callable[[], None]


class UnreachableSegment(RouteStateError):
    """No path exists inside the allowed region."""


@dataclass(frozen=True)
class SegmentRoute:
    tree: RouteTree
    path: Tuple[Point, ...]
    cost: float
    vias: int


@dataclass
class RoutingStats:
    rrr_rounds: int = 0
    first_pass_to: int = 0
    final_to: int = 0
    pass_wl_deltas: List[Tuple[str, float]] = field(default_factory=list)
    unrouted: List[str] = field(default_factory=list)


@dataclass
class RoutingResult:
    nets: List[Net]
    stats: RoutingStats


# ----- edge cost ---------------------------------------------------------------

class EdgeCoster:
    """Evaluates the strategy's cost expression against live grid state."""

    def __init__(self, strategy: RouterStrategy, grid: GcellGrid):
        self.grid = grid
        self.fn = strategy.cost_fn
        self.reserve = strategy.soft_reserve
        self.lengths = [grid.edge_length(e) for e in grid.edges()]
        self.vias = [is_via(e) for e in grid.edges()]

    def cost(self, index: int) -> float:
        grid = self.grid
        density = float(grid.pin_density[index])
        effective = max(float(grid.capacity[index]) - self.reserve * density, 0.0)
        demand = float(grid.demand[index])
        excess = max(demand + 1.0 - effective, 0.0)
        if self.vias[index]:
            base_len, via_penalty = 0.0, 1.0
        else:
            base_len, via_penalty = self.lengths[index], 0.0
        return self.fn((demand, effective, excess, density, base_len, via_penalty, float(grid.history[index])))

    def edge(self, edge: Edge, reuse: FrozenSet[Edge] = frozenset()) -> float:
        if edge in reuse:
            return 0.0
        return self.cost(self.grid.edge_id(edge))

    def step(self, p: Point, q: Point, reuse: FrozenSet[Edge] = frozenset()) -> float:
        """Cheapest legal layer for a unit 2D step."""
        layers = self.grid.wire_layers(p[1] == q[1])
        return min(self.edge(make_edge((p[0], p[1], l), (q[0], q[1], l)), reuse) for l in layers)


def edge_cost(strategy: RouterStrategy, grid: GcellGrid, edge: Edge) -> float:
    return EdgeCoster(strategy, grid).edge(make_edge(*edge))


# ----- layer assignment -------------------------------------------------------

def _unit_steps(a: Point, b: Point) -> List[Point]:
    """Points strictly after ``a`` up to and including ``b`` on a straight line."""
    if a[0] != b[0]:
        step = 1 if b[0] > a[0] else -1
        return [(x, a[1]) for x in range(a[0] + step, b[0] + step, step)]
    step = 1 if b[1] > a[1] else -1
    return [(a[0], y) for y in range(a[1] + step, b[1] + step, step)]


def expand_corners(corners: Sequence[Point]) -> Tuple[Point, ...]:
    path = [corners[0]]
    for a, b in zip(corners, corners[1:]):
        if a != b:
            path.extend(_unit_steps(a, b))
    return tuple(path)


def _runs(path: Sequence[Point]) -> List[Tuple[bool, List[Point]]]:
    runs: List[Tuple[bool, List[Point]]] = []
    for a, b in zip(path, path[1:]):
        horizontal = a[1] == b[1]
        if runs and runs[-1][0] == horizontal:
            runs[-1][1].append(b)
        else:
            runs.append((horizontal, [a, b]))
    return runs


def _via_stack(x: int, y: int, low: int, high: int) -> List[Edge]:
    low, high = min(low, high), max(low, high)
    return [((x, y, l), (x, y, l + 1)) for l in range(low, high)]


def assign_layers(
    coster: EdgeCoster,
    source: Node,
    target: Node,
    path: Sequence[Point],
    reuse: FrozenSet[Edge] = frozenset(),
) -> Tuple[FrozenSet[Edge], float, int]:
    """3D edges for a 2D path; each straight run goes on its cheapest legal layer.

    Returns (edges, total edge cost, via count).
    """
    grid = coster.grid
    edges: List[Edge] = []
    layer = source[2]
    for horizontal, points in _runs(path):
        best_layer, best_cost = None, math.inf
        for candidate in grid.wire_layers(horizontal):
            run_cost = sum(
                coster.edge(make_edge((a[0], a[1], candidate), (b[0], b[1], candidate)), reuse)
                for a, b in zip(points, points[1:])
            )
            if run_cost < best_cost:
                best_layer, best_cost = candidate, run_cost
        if best_layer is None:
            raise RouteStateError("grid has no layer for a required wire direction")
        edges.extend(_via_stack(points[0][0], points[0][1], layer, best_layer))
        edges.extend(
            make_edge((a[0], a[1], best_layer), (b[0], b[1], best_layer)) for a, b in zip(points, points[1:])
        )
        layer = best_layer
    edges.extend(_via_stack(target[0], target[1], layer, target[2]))
    unique = frozenset(edges)
    total = sum(coster.edge(e, reuse) for e in sorted(unique))
    vias = sum(1 for e in unique if is_via(e))
    return unique, total, vias


def _segment_route(coster, source, target, path, reuse, cost=None) -> SegmentRoute:
    edges, total, vias = assign_layers(coster, source, target, path, reuse)
    return SegmentRoute(
        tree=RouteTree(root=source, edges=edges),
        path=tuple(path),
        cost=total if cost is None else cost,
        vias=vias,
    )


# ----- pattern routing -------------------------------------------------------

def enumerate_patterns(a: Point, b: Point, shapes: Iterable[str]) -> List[Tuple[Point, ...]]:
    """Corner sequences of every monotone pattern allowed by ``shapes``."""
    if a[0] == b[0] or a[1] == b[1]:
        return [(a, b)]
    shapes = set(shapes)
    xs = range(min(a[0], b[0]) + 1, max(a[0], b[0]))
    ys = range(min(a[1], b[1]) + 1, max(a[1], b[1]))
    found: List[Tuple[Point, ...]] = []
    if "L" in shapes:
        found.append((a, (b[0], a[1]), b))
        found.append((a, (a[0], b[1]), b))
    if "Z" in shapes:
        found.extend((a, (xm, a[1]), (xm, b[1]), b) for xm in xs)
        found.extend((a, (a[0], ym), (b[0], ym), b) for ym in ys)
    if "3-bend" in shapes:
        for xm in xs:
            for ym in ys:
                found.append((a, (xm, a[1]), (xm, ym), (b[0], ym), b))
                found.append((a, (a[0], ym), (xm, ym), (xm, b[1]), b))
    return found


def pattern_route(
    strategy: RouterStrategy,
    grid: GcellGrid,
    segment: Segment,
    coster: Optional[EdgeCoster] = None,
    reuse: FrozenSet[Edge] = frozenset(),
) -> Optional[SegmentRoute]:
    """Cheapest pattern; ties by fewer vias, then bend coordinates."""
    source, target = segment
    if source == target:
        return None
    coster = coster or EdgeCoster(strategy, grid)
    a, b = source[:2], target[:2]
    if a == b:
        return _segment_route(coster, source, target, (a,), reuse)

    best: Optional[SegmentRoute] = None
    best_key = None
    for corners in enumerate_patterns(a, b, strategy.pattern_set):
        route = _segment_route(coster, source, target, expand_corners(corners), reuse)
        key = (route.cost, route.vias, corners[1:-1])
        if best_key is None or key < best_key:
            best, best_key = route, key
    return best


# ----- sparse maze routing ---------------------------------------------------

def lattice_lines(extent: int, spacing: int, offset: int, keep: Iterable[int]) -> List[int]:
    lines = {c for c in range(extent) if (c - offset) % spacing == 0}
    lines.update(keep)
    return sorted(lines)


def least_cost_path(
    step_cost: Callable[[Point, Point], float],
    xs: Sequence[int],
    ys: Sequence[int],
    source: Point,
    target: Point,
    allowed: Optional[Set[Point]] = None,
) -> Optional[Tuple[Tuple[Point, ...], float]]:
    """Dijkstra over the lattice spanned by ``xs`` x ``ys``.

    Hops join consecutive lattice lines and cost the sum of their unit steps.
    Ties go to fewer bends, then to lexicographically smaller nodes.
    """
    if allowed is not None and (source not in allowed or target not in allowed):
        return None
    x_index = {x: i for i, x in enumerate(xs)}
    y_index = {y: j for j, y in enumerate(ys)}
    hop_cache: Dict[Tuple[Point, Point], float] = {}

    def hop(p: Point, q: Point) -> float:
        key = (p, q) if p <= q else (q, p)
        cached = hop_cache.get(key)
        if cached is not None:
            return cached
        total = 0.0
        previous = key[0]
        for point in _unit_steps(key[0], key[1]):
            if allowed is not None and point not in allowed:
                total = math.inf
                break
            total += step_cost(previous, point)
            previous = point
        hop_cache[key] = total
        return total

    def neighbours(p: Point):
        i, j = x_index[p[0]], y_index[p[1]]
        if i > 0:
            yield (xs[i - 1], p[1]), 1
        if i + 1 < len(xs):
            yield (xs[i + 1], p[1]), 1
        if j > 0:
            yield (p[0], ys[j - 1]), 2
        if j + 1 < len(ys):
            yield (p[0], ys[j + 1]), 2

    start = (source, 0)
    best: Dict[Tuple[Point, int], Tuple[float, int]] = {start: (0.0, 0)}
    previous: Dict[Tuple[Point, int], Tuple[Point, int]] = {}
    heap = [(0.0, 0, source, 0)]
    while heap:
        cost, bends, node, direction = heapq.heappop(heap)
        state = (node, direction)
        if best.get(state) != (cost, bends):
            continue
        if node == target:
            corners = [node]
            while state in previous:
                state = previous[state]
                corners.append(state[0])
            corners.reverse()
            return expand_corners(corners), cost
        for other, heading in neighbours(node):
            if allowed is not None and other not in allowed:
                continue
            step = hop(node, other)
            if step == math.inf:
                continue
            next_state = (other, heading)
            candidate = (cost + step, bends + (1 if direction and direction != heading else 0))
            known = best.get(next_state)
            if known is None or candidate < known:
                best[next_state] = candidate
                previous[next_state] = state
                heapq.heappush(heap, (candidate[0], candidate[1], other, heading))
    return None


def candidate_spacing(segment: Segment, divisor: int) -> int:
    (sx, sy, _), (tx, ty, _) = segment
    half_perimeter_steps = abs(tx - sx) + abs(ty - sy)
    return max(1, math.ceil(half_perimeter_steps / divisor))


def sparse_maze_route(
    strategy: RouterStrategy,
    grid: GcellGrid,
    segment: Segment,
    candidate: GridCandidate,
    coster: Optional[EdgeCoster] = None,
    reuse: FrozenSet[Edge] = frozenset(),
    allowed: Optional[Set[Point]] = None,
) -> SegmentRoute:
    """Least-cost route on the candidate's sparsified lattice.

    ``cost`` of the result is the 2D search cost (each unit step on its
    cheapest legal layer).
    """
    coster = coster or EdgeCoster(strategy, grid)
    source, target = segment
    a, b = source[:2], target[:2]
    if a == b:
        return _segment_route(coster, source, target, (a,), reuse, cost=0.0)
    spacing = candidate_spacing(segment, candidate.divisor)
    xs = lattice_lines(grid.dims[0], spacing, candidate.offset[0], (a[0], b[0]))
    ys = lattice_lines(grid.dims[1], spacing, candidate.offset[1], (a[1], b[1]))
    found = least_cost_path(lambda p, q: coster.step(p, q, reuse), xs, ys, a, b, allowed)
    if found is None:
        raise UnreachableSegment(f"no path from {source} to {target} in the allowed region")
    path, cost = found
    return _segment_route(coster, source, target, path, reuse, cost=cost)


# ----- full flow -------------------------------------------------------------

class GlobalRouter:
    """Routes every net of a design under one strategy.

    When ``corridor`` is given every net is maze routed inside the region it
    returns for widening level 0, 1, ...; a ``None`` region means no further
    widening and the net stays unrouted. ``guard`` is called before every net
    and every rip-up round; it aborts the run by raising.
    """

    def __init__(
        self,
        strategy: RouterStrategy,
        grid: GcellGrid,
        corridor: Optional[Corridor] = None,
        guard: Optional[Guard] = None,
    ):
        self.strategy = strategy
        self.grid = grid
        self.corridor = corridor
        self.guard = guard
        self.coster = EdgeCoster(strategy, grid)
        self._topologies = {}

    # ordering and scoring

    def _tiebreak(self, net: Net):
        if self.strategy.seed == 0:
            return net.id
        digest = hashlib.blake2b(f"{self.strategy.seed}:{net.id}".encode(), digest_size=8).hexdigest()
        return (digest, net.id)

    def order(self, nets: Sequence[Net]) -> List[Net]:
        policy = self.strategy.order_policy
        tile = self.grid.tile
        if policy is OrderPolicy.ID:
            return sorted(nets, key=lambda n: n.id)
        if policy is OrderPolicy.HPWL_ASC:
            key = lambda n: (half_perimeter(n, tile), self._tiebreak(n))
        elif policy is OrderPolicy.HPWL_DESC:
            key = lambda n: (-half_perimeter(n, tile), self._tiebreak(n))
        else:
            key = lambda n: (-len(n.unique_pins()), self._tiebreak(n))
        return sorted(nets, key=key)

    def score(self, edges: Iterable[Edge]) -> Tuple[int, float, int]:
        """(overflow added by committing, wirelength, vias) against current demand."""
        grid = self.grid
        excess = 0
        wl = 0.0
        vias = 0
        for edge in sorted(edges):
            index = grid.edge_id(edge)
            if grid.demand[index] + 1 > grid.capacity[index]:
                excess += 1
            if is_via(edge):
                vias += 1
            else:
                wl += self.coster.lengths[index]
        return excess, wl, vias

    def total_wl(self) -> float:
        return sum(tree_metrics(self.grid, tree)[0] for tree in self.grid.routes.values())

    # net routing

    def _topology(self, net: Net):
        if net.id not in self._topologies:
            self._topologies[net.id] = net_topology(net)
        return self._topologies[net.id]

    def _best_candidate(self, segment, candidates, reuse, allowed) -> SegmentRoute:
        best, best_score = None, None
        for candidate in candidates:
            route = sparse_maze_route(self.strategy, self.grid, segment, candidate, self.coster, reuse, allowed)
            score = self.score(route.tree.edges - reuse)
            if best_score is None or score < best_score:
                best, best_score = route, score
        return best

    def _build(self, net: Net, candidates: Optional[Sequence[GridCandidate]], allowed) -> RouteTree:
        pins = net.unique_pins()
        used: FrozenSet[Edge] = frozenset()
        for segment in self._topology(net).segments:
            if candidates is None:
                route = pattern_route(self.strategy, self.grid, segment, self.coster, used)
            else:
                route = self._best_candidate(segment, candidates, used, allowed)
            if route is not None:
                used = used | route.tree.edges
        return RouteTree.build(pins[0], used, pins)

    def route_net(self, net: Net, candidates: Optional[Sequence[GridCandidate]] = None) -> Optional[RouteTree]:
        """Route one net without committing it; ``None`` if its corridor is exhausted."""
        if self.guard is not None:
            self.guard()
        if self.corridor is None:
            return self._build(net, candidates, None)
        level = 0
        while True:
            allowed = self.corridor(net, level)
            if allowed is None:
                return None
            try:
                return self._build(net, candidates or self.strategy.grid_candidates, allowed)
            except UnreachableSegment:
                logger.debug("net %s blocked at corridor level %d", net.id, level)
                level += 1

    def _reroute_if_better(self, net: Net, candidates: Sequence[GridCandidate]) -> bool:
        old = self.grid.rip_up(net)
        old_score = self.score(old.edges)
        new = self.route_net(net, candidates)
        if new is not None and self.score(new.edges) < old_score:
            self.grid.commit_route(net, new)
            return True
        self.grid.commit_route(net, old)
        return False

    # stages

    def _first_pass(self, ordered: Sequence[Net], stats: RoutingStats) -> None:
        first = None if self.corridor is None else self.strategy.grid_candidates
        for net in ordered:
            tree = self.route_net(net, first)
            if tree is None:
                stats.unrouted.append(net.id)
                continue
            self.grid.commit_route(net, tree)

    def _rip_up_and_reroute(self, ordered: Sequence[Net], stats: RoutingStats) -> None:
        grid = self.grid
        _, current = overflow(grid)
        for round_index in range(1, self.strategy.rrr_max_rounds + 1):
            if current == 0:
                break
            if self.guard is not None:
                self.guard()
            hot = grid.overflowed()
            victims = [n for n in ordered if grid.is_routed(n) and grid.route_of(n).edges & hot]
            state = grid.snapshot()
            for net in victims:
                old = grid.route_of(net)
                for edge in old.edges & hot:
                    grid.history[grid.edge_id(edge)] += 1.0
                grid.rip_up(net)
                tree = self.route_net(net, self.strategy.grid_candidates)
                grid.commit_route(net, tree if tree is not None else old)
            stats.rrr_rounds = round_index
            _, after = overflow(grid)
            logger.debug("rrr round %d: %d nets, overflow %d -> %d", round_index, len(victims), current, after)
            if after > current:
                grid.restore(state)
                break
            current = after

    def _pulse(self, ordered: Sequence[Net], post: PostPass) -> None:
        routed = [n for n in ordered if self.grid.is_routed(n)]
        count = math.ceil(post.top_fraction * len(routed))
        for _ in range(PULSE_MAX_SWEEPS):
            ranked = sorted(
                routed,
                key=lambda n: (-tree_metrics(self.grid, self.grid.route_of(n))[0], self._tiebreak(n)),
            )
            improved = False
            for net in ranked[:count]:
                improved |= self._reroute_if_better(net, self.strategy.grid_candidates)
            if not improved:
                break

    def _rebalance(self, ordered: Sequence[Net]) -> None:
        grid = self.grid
        routed = [n for n in ordered if grid.is_routed(n)]
        before = (overflow(grid)[1], self.total_wl())
        state = grid.snapshot()
        for net in routed:
            grid.rip_up(net)
        for net in routed:
            tree = self.route_net(net, self.strategy.grid_candidates)
            if tree is None:
                grid.restore(state)
                return
            grid.commit_route(net, tree)
        after = (overflow(grid)[1], self.total_wl())
        if after > before:
            grid.restore(state)

    def _compaction(self, ordered: Sequence[Net], post: PostPass) -> None:
        finer = (GridCandidate(post.divisor, (0, 0)),)
        for net in ordered:
            if self.grid.is_routed(net) and half_perimeter(net, self.grid.tile) >= post.min_hp:
                self._reroute_if_better(net, finer)

    def route_all(self, nets: Sequence[Net]) -> RoutingResult:
        stats = RoutingStats()
        self.grid.annotate_pin_density(nets)
        ordered = self.order(nets)
        self._first_pass(ordered, stats)
        stats.first_pass_to = overflow(self.grid)[1]
        self._rip_up_and_reroute(ordered, stats)
        for post in self.strategy.post_passes:
            before = self.total_wl()
            if post.kind == "pulse":
                self._pulse(ordered, post)
            elif post.kind == "rebalance":
                self._rebalance(ordered)
            else:
                self._compaction(ordered, post)
            stats.pass_wl_deltas.append((post.kind, self.total_wl() - before))
        stats.final_to = overflow(self.grid)[1]
        routes = self.grid.routes
        return RoutingResult(nets=[n.with_route(routes.get(n.id)) for n in nets], stats=stats)


def route_all(strategy: RouterStrategy, grid: GcellGrid, nets: Sequence[Net]) -> RoutingResult:
    return GlobalRouter(strategy, grid).route_all(nets)

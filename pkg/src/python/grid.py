"""
GCell routing lattice.

Holds per-edge capacity, demand, negotiated-congestion history and pin
density, and computes the raw QoR metrics (wirelength, via count, overflow).
Nodes are ``(x, y, layer)`` with 0-based layers; an edge is a sorted pair of
nodes, either a wire step on one layer or a via between adjacent layers.
"""
from __future__ import annotations

import logging
import math
from collections import defaultdict, deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import MissingRouteError, RouteStateError

logger = logging.getLogger(__name__)

Node = Tuple[int, int, int]
Edge = Tuple[Node, Node]
Point = Tuple[int, int]

UNBOUNDED = 1 << 40


class LayerDirection(str, Enum):
    HORIZONTAL = "horizontal"
    VERTICAL = "vertical"


def make_edge(a: Node, b: Node) -> Edge:
    return (a, b) if a <= b else (b, a)


def is_via(edge: Edge) -> bool:
    return edge[0][2] != edge[1][2]


@dataclass(frozen=True)
class CapacityAdjustment:
    """Post-construction capacity override for one edge (ISPD adjustment record)."""
    edge: Edge
    capacity: int


@dataclass(frozen=True)
class RouteTree:
    root: Node
    edges: frozenset = field(default_factory=frozenset)

    @classmethod
    def build(cls, root: Node, edges: Iterable[Edge], pins: Sequence[Node]) -> "RouteTree":
        """Extract a tree spanning ``pins`` from a (possibly cyclic) edge union.

        BFS from the root keeps one parent edge per node, then branches that
        end in a non-pin node are pruned.
        """
        adjacency: Dict[Node, List[Node]] = defaultdict(list)
        for a, b in set(edges):
            adjacency[a].append(b)
            adjacency[b].append(a)
        for neighbours in adjacency.values():
            neighbours.sort()

        parent: Dict[Node, Node] = {}
        visited = {root}
        queue = deque([root])
        while queue:
            node = queue.popleft()
            for other in adjacency.get(node, ()):
                if other not in visited:
                    visited.add(other)
                    parent[other] = node
                    queue.append(other)

        missing = [p for p in pins if p not in visited]
        if missing:
            raise RouteStateError(f"route does not reach pins {missing}")

        pin_set = set(pins) | {root}
        children: Dict[Node, int] = defaultdict(int)
        for node, up in parent.items():
            children[up] += 1
        leaves = deque(sorted(n for n in parent if children[n] == 0 and n not in pin_set))
        kept = dict(parent)
        while leaves:
            leaf = leaves.popleft()
            up = kept.pop(leaf)
            children[up] -= 1
            if children[up] == 0 and up not in pin_set:
                leaves.append(up)

        return cls(root=root, edges=frozenset(make_edge(n, up) for n, up in kept.items()))

    def nodes(self) -> set:
        found = {self.root}
        for a, b in self.edges:
            found.add(a)
            found.add(b)
        return found

    def wire_edges(self) -> List[Edge]:
        return sorted(e for e in self.edges if not is_via(e))

    def via_edges(self) -> List[Edge]:
        return sorted(e for e in self.edges if is_via(e))

    def is_valid_for(self, pins: Sequence[Node]) -> bool:
        """Connected, acyclic and spanning every pin."""
        nodes = self.nodes()
        if len(self.edges) != len(nodes) - 1:
            return False
        if not set(pins) <= nodes:
            return False
        try:
            rebuilt = RouteTree.build(self.root, self.edges, sorted(nodes))
        except RouteStateError:
            return False
        return rebuilt.edges == self.edges


@dataclass(frozen=True)
class Net:
    id: str
    pins: Tuple[Node, ...]
    route: Optional[RouteTree] = None

    def unique_pins(self) -> Tuple[Node, ...]:
        return tuple(sorted(set(self.pins)))

    def with_route(self, tree: Optional[RouteTree]) -> "Net":
        return replace(self, route=tree)


class QorVector(BaseModel):
    """Objective vector of one evaluation (GR and DR stages)."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    gr_wl: float = Field(0.0, ge=0)
    gr_vc: float = Field(0.0, ge=0)
    gr_twl: float = Field(0.0, ge=0)
    gr_rt: float = Field(0.0, ge=0)
    dr_wl: float = Field(0.0, ge=0)
    dr_vc: float = Field(0.0, ge=0)
    dr_twl: float = Field(0.0, ge=0)
    dr_rt: float = Field(0.0, ge=0)
    mo: int = Field(0, ge=0)
    to: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _totals_match(self) -> "QorVector":
        for stage in ("gr", "dr"):
            wl = getattr(self, f"{stage}_wl")
            vc = getattr(self, f"{stage}_vc")
            twl = getattr(self, f"{stage}_twl")
            if not math.isclose(twl, wl + vc, rel_tol=1e-9, abs_tol=1e-9):
                raise ValueError(f"{stage}_twl {twl} != {stage}_wl + {stage}_vc ({wl + vc})")
        return self

    def value(self, key: str) -> float:
        return getattr(self, key)

    def with_detail(self, dr_wl: float, dr_vc: float, dr_rt: float) -> "QorVector":
        fields = self.model_dump()
        fields.update(dr_wl=dr_wl, dr_vc=dr_vc, dr_twl=dr_wl + dr_vc, dr_rt=dr_rt)
        return QorVector(**fields)

    def with_runtime(self, gr_rt: float) -> "QorVector":
        fields = self.model_dump()
        fields.update(gr_rt=gr_rt)
        return QorVector(**fields)


METRIC_KEYS: Tuple[str, ...] = tuple(QorVector.model_fields)


@dataclass
class GridState:
    demand: np.ndarray
    routes: Dict[str, RouteTree]


class GcellGrid:
    """3D GCell lattice with direction-constrained wire edges and vias."""

    def __init__(
        self,
        dims: Tuple[int, int, int],
        tile: Tuple[float, float],
        layer_dirs: Sequence[LayerDirection],
        layer_capacity: Sequence[int],
        via_capacity: Optional[int] = None,
        adjustments: Iterable[CapacityAdjustment] = (),
    ):
        nx, ny, nl = (int(d) for d in dims)
        if min(nx, ny, nl) < 1:
            raise ValueError(f"grid dims must be positive, got {dims}")
        if tile[0] <= 0 or tile[1] <= 0:
            raise ValueError(f"tile sizes must be positive, got {tile}")
        if len(layer_dirs) != nl or len(layer_capacity) != nl:
            raise ValueError("need one direction and one capacity per layer")
        if any(c < 0 for c in layer_capacity):
            raise ValueError("capacities must be non-negative")
        if via_capacity is not None and via_capacity < 0:
            raise ValueError("via capacity must be non-negative")

        self.dims = (nx, ny, nl)
        self.tile = (float(tile[0]), float(tile[1]))
        self.layer_dirs = tuple(LayerDirection(d) for d in layer_dirs)
        self.layer_capacity = tuple(int(c) for c in layer_capacity)
        self.via_capacity = via_capacity
        self.horizontal_layers = tuple(l for l, d in enumerate(self.layer_dirs) if d is LayerDirection.HORIZONTAL)
        self.vertical_layers = tuple(l for l, d in enumerate(self.layer_dirs) if d is LayerDirection.VERTICAL)
        if nx > 1 and not self.horizontal_layers:
            raise ValueError("grid has several columns but no horizontal layer")
        if ny > 1 and not self.vertical_layers:
            raise ValueError("grid has several rows but no vertical layer")

        edges: List[Edge] = []
        capacity: List[int] = []
        for layer, direction in enumerate(self.layer_dirs):
            if direction is LayerDirection.HORIZONTAL:
                for x in range(nx - 1):
                    for y in range(ny):
                        edges.append(((x, y, layer), (x + 1, y, layer)))
                        capacity.append(self.layer_capacity[layer])
            else:
                for x in range(nx):
                    for y in range(ny - 1):
                        edges.append(((x, y, layer), (x, y + 1, layer)))
                        capacity.append(self.layer_capacity[layer])
        for layer in range(nl - 1):
            for x in range(nx):
                for y in range(ny):
                    edges.append(((x, y, layer), (x, y, layer + 1)))
                    capacity.append(UNBOUNDED if via_capacity is None else via_capacity)

        self._edges: List[Edge] = edges
        self._index: Dict[Edge, int] = {e: i for i, e in enumerate(edges)}
        self.capacity = np.array(capacity, dtype=np.int64)
        self.demand = np.zeros(len(edges), dtype=np.int64)
        self.history = np.zeros(len(edges), dtype=np.float64)
        self.pin_density = np.zeros(len(edges), dtype=np.float64)
        self.adjustments: List[CapacityAdjustment] = []
        self._routes: Dict[str, RouteTree] = {}
        for adjustment in adjustments:
            self.adjust_capacity(adjustment.edge, adjustment.capacity)

    # ----- lattice queries -------------------------------------------------

    def __len__(self) -> int:
        return len(self._edges)

    def edges(self) -> Iterator[Edge]:
        return iter(self._edges)

    def in_bounds(self, node: Node) -> bool:
        x, y, layer = node
        return 0 <= x < self.dims[0] and 0 <= y < self.dims[1] and 0 <= layer < self.dims[2]

    def has_edge(self, edge: Edge) -> bool:
        return make_edge(*edge) in self._index

    def edge_id(self, edge: Edge) -> int:
        try:
            return self._index[make_edge(*edge)]
        except KeyError:
            raise ValueError(f"edge {edge} does not exist in this grid") from None

    def edge_at(self, index: int) -> Edge:
        return self._edges[index]

    def edge_length(self, edge: Edge) -> float:
        (ax, ay, _), (bx, by, _) = edge
        if ax != bx:
            return self.tile[0] * abs(bx - ax)
        if ay != by:
            return self.tile[1] * abs(by - ay)
        return 0.0

    def wire_layers(self, horizontal: bool) -> Tuple[int, ...]:
        return self.horizontal_layers if horizontal else self.vertical_layers

    def capacity_of(self, edge: Edge) -> int:
        return int(self.capacity[self.edge_id(edge)])

    def demand_of(self, edge: Edge) -> int:
        return int(self.demand[self.edge_id(edge)])

    def adjust_capacity(self, edge: Edge, capacity: int) -> None:
        if capacity < 0:
            raise ValueError(f"capacity must be non-negative, got {capacity}")
        self.capacity[self.edge_id(edge)] = capacity
        self.adjustments.append(CapacityAdjustment(make_edge(*edge), int(capacity)))

    def annotate_pin_density(self, nets: Iterable[Net]) -> None:
        """Pin density of an edge is the mean pin count of its GCells."""
        counts: Dict[Point, int] = defaultdict(int)
        for net in nets:
            for x, y, _ in net.unique_pins():
                counts[(x, y)] += 1
        density = np.zeros(len(self._edges), dtype=np.float64)
        for i, ((ax, ay, _), (bx, by, _)) in enumerate(self._edges):
            density[i] = (counts.get((ax, ay), 0) + counts.get((bx, by), 0)) / 2.0
        self.pin_density = density

    # ----- route bookkeeping -----------------------------------------------

    @property
    def routes(self) -> Mapping[str, RouteTree]:
        return dict(self._routes)

    def is_routed(self, net: Net) -> bool:
        return net.id in self._routes

    def route_of(self, net: Net) -> RouteTree:
        try:
            return self._routes[net.id]
        except KeyError:
            raise MissingRouteError(net.id) from None

    def _ids(self, tree: RouteTree) -> np.ndarray:
        return np.fromiter((self.edge_id(e) for e in tree.edges), dtype=np.int64, count=len(tree.edges))

    def commit_route(self, net: Net, tree: RouteTree) -> None:
        if net.id in self._routes:
            raise RouteStateError(f"net '{net.id}' is already routed")
        ids = self._ids(tree)
        self.demand[ids] += 1
        self._routes[net.id] = tree

    def rip_up(self, net: Net) -> RouteTree:
        tree = self._routes.pop(net.id, None)
        if tree is None:
            raise RouteStateError(f"net '{net.id}' is not routed")
        self.demand[self._ids(tree)] -= 1
        return tree

    def recount_demand(self) -> np.ndarray:
        counts = np.zeros(len(self._edges), dtype=np.int64)
        for tree in self._routes.values():
            counts[self._ids(tree)] += 1
        return counts

    def snapshot(self) -> GridState:
        return GridState(demand=self.demand.copy(), routes=dict(self._routes))

    def restore(self, state: GridState) -> None:
        self.demand = state.demand.copy()
        self._routes = dict(state.routes)

    def copy(self) -> "GcellGrid":
        clone = GcellGrid.__new__(GcellGrid)
        clone.__dict__.update(self.__dict__)
        clone.capacity = self.capacity.copy()
        clone.demand = self.demand.copy()
        clone.history = self.history.copy()
        clone.pin_density = self.pin_density.copy()
        clone.adjustments = list(self.adjustments)
        clone._routes = dict(self._routes)
        return clone

    def fresh(self) -> "GcellGrid":
        """Copy with capacity kept and all routing state cleared."""
        clone = self.copy()
        clone.demand = np.zeros_like(self.demand)
        clone.history = np.zeros_like(self.history)
        clone._routes = {}
        return clone

    # ----- overflow --------------------------------------------------------

    def excess(self) -> np.ndarray:
        return np.maximum(self.demand - self.capacity, 0)

    def overflowed(self) -> set:
        return {self._edges[i] for i in np.flatnonzero(self.demand > self.capacity)}

    # ----- refinement ------------------------------------------------------

    def refine(self, factor: int) -> "GcellGrid":
        """F-times finer lattice for the detailed-routing proxy.

        A coarse edge's capacity is split over the F parallel fine edges that
        cross the same boundary (remainder to the lowest track). Fine edges
        inside a GCell reuse the split of the coarse edge leaving that GCell
        towards higher coordinates (or lower, on the last column/row).
        """
        if factor < 1:
            raise ValueError("refinement factor must be positive")
        nx, ny, nl = self.dims
        fine = GcellGrid(
            dims=(nx * factor, ny * factor, nl),
            tile=(self.tile[0] / factor, self.tile[1] / factor),
            layer_dirs=self.layer_dirs,
            layer_capacity=[0] * nl,
            via_capacity=self.via_capacity,
        )

        def split(total: int, track: int) -> int:
            return total // factor + (1 if track < total % factor else 0)

        for i, ((fx, fy, layer), (gx, gy, glayer)) in enumerate(fine._edges):
            if layer != glayer:
                continue
            if gx != fx:
                cx, cy, track = fx // factor, fy // factor, fy % factor
                if nx == 1:
                    total = self.layer_capacity[layer]
                else:
                    ref = min(cx, nx - 2)
                    total = int(self.capacity[self._index[((ref, cy, layer), (ref + 1, cy, layer))]])
            else:
                cx, cy, track = fx // factor, fy // factor, fx % factor
                if ny == 1:
                    total = self.layer_capacity[layer]
                else:
                    ref = min(cy, ny - 2)
                    total = int(self.capacity[self._index[((cx, ref, layer), (cx, ref + 1, layer))]])
            fine.capacity[i] = split(total, track)
        logger.debug("refined %s lattice by %d to %s", self.dims, factor, fine.dims)
        return fine


def overflow(grid: GcellGrid) -> Tuple[int, int]:
    """(maximum overflow, total overflow) over all lattice edges."""
    excess = grid.excess()
    if excess.size == 0:
        return 0, 0
    return int(excess.max()), int(excess.sum())


def tree_metrics(grid: GcellGrid, tree: RouteTree) -> Tuple[float, int]:
    """(wirelength in length units, via count) of one route tree."""
    wl = 0.0
    vc = 0
    for edge in tree.edges:
        if is_via(edge):
            vc += abs(edge[1][2] - edge[0][2])
        else:
            wl += grid.edge_length(edge)
    return wl, vc


def metrics(grid: GcellGrid, nets: Sequence[Net]) -> QorVector:
    """GR fields of the QoR vector for routed nets."""
    wl = 0.0
    vc = 0
    for net in nets:
        if net.route is None:
            raise MissingRouteError(net.id)
        net_wl, net_vc = tree_metrics(grid, net.route)
        wl += net_wl
        vc += net_vc
    mo, to = overflow(grid)
    return QorVector(gr_wl=wl, gr_vc=float(vc), gr_twl=wl + vc, mo=mo, to=to)

"""
Net decomposition into 2-pin segments.

Multi-pin nets use a two-hub star: the two farthest pins become hubs, the
hub-to-hub segment comes first and every other pin attaches to its nearer
hub. A Manhattan MST is kept as the reference topology. All tie-breaks are
lexicographic on ``(x, y, layer)`` so repeated runs decompose identically.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import List, Sequence, Tuple

from .grid import Net, Node

Segment = Tuple[Node, Node]


class TopologyKind(str, Enum):
    TWO_HUB_STAR = "two-hub-star"
    MST = "mst"
    DIRECT = "direct"


@dataclass(frozen=True)
class Topology:
    segments: Tuple[Segment, ...]
    kind: TopologyKind

    def length(self) -> int:
        return sum(manhattan(a, b) for a, b in self.segments)


def manhattan(a: Node, b: Node) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def half_perimeter(net: Net, tile: Tuple[float, float] = (1.0, 1.0)) -> float:
    """Bounding-box half perimeter of the net's pins in length units."""
    xs = [p[0] for p in net.pins]
    ys = [p[1] for p in net.pins]
    return (max(xs) - min(xs)) * tile[0] + (max(ys) - min(ys)) * tile[1]


def two_hub_star(net: Net) -> Topology:
    pins = net.unique_pins()
    if len(pins) < 2:
        return Topology(segments=(), kind=TopologyKind.DIRECT)
    if len(pins) == 2:
        return Topology(segments=((pins[0], pins[1]),), kind=TopologyKind.DIRECT)

    hub_a, hub_b = pins[0], pins[1]
    best = -1
    for i, p in enumerate(pins):
        for q in pins[i + 1:]:
            distance = manhattan(p, q)
            if distance > best:
                best = distance
                hub_a, hub_b = p, q

    segments: List[Segment] = [(hub_a, hub_b)]
    for pin in pins:
        if pin == hub_a or pin == hub_b:
            continue
        hub = hub_a if manhattan(pin, hub_a) <= manhattan(pin, hub_b) else hub_b
        segments.append((hub, pin))
    return Topology(segments=tuple(segments), kind=TopologyKind.TWO_HUB_STAR)


class _DisjointSet:
    def __init__(self, size: int):
        self.parent = list(range(size))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i: int, j: int) -> bool:
        ri, rj = self.find(i), self.find(j)
        if ri == rj:
            return False
        self.parent[max(ri, rj)] = min(ri, rj)
        return True


def mst_topology(net: Net) -> Topology:
    """Kruskal MST under Manhattan distance, ties by endpoint order."""
    pins = net.unique_pins()
    if len(pins) < 2:
        return Topology(segments=(), kind=TopologyKind.DIRECT)
    candidates = sorted(
        (manhattan(pins[i], pins[j]), pins[i], pins[j], i, j)
        for i in range(len(pins))
        for j in range(i + 1, len(pins))
    )
    forest = _DisjointSet(len(pins))
    segments: List[Segment] = []
    for _, a, b, i, j in candidates:
        if forest.union(i, j):
            segments.append((a, b))
            if len(segments) == len(pins) - 1:
                break
    return Topology(segments=tuple(segments), kind=TopologyKind.MST)


def net_topology(net: Net) -> Topology:
    """Topology used by the router: two-hub star from three pins upward."""
    return two_hub_star(net)


def is_spanning(topology: Topology, pins: Sequence[Node]) -> bool:
    unique = sorted(set(pins))
    if len(topology.segments) != max(len(unique) - 1, 0):
        return False
    index = {p: i for i, p in enumerate(unique)}
    forest = _DisjointSet(len(unique))
    for a, b in topology.segments:
        if a not in index or b not in index or not forest.union(index[a], index[b]):
            return False
    return True

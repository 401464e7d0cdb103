"""
Benchmark parsing, route-guide emission and QoR history encoding.

Benchmarks use the ISPD-2008 global routing dialect::

    grid X Y L
    vertical capacity c1 .. cL
    horizontal capacity c1 .. cL
    minimum width w1 .. wL
    minimum spacing s1 .. sL
    via spacing v1 .. vL
    origin_x origin_y tile_width tile_height
    num net N
    <name> <id> <pin count> [min width]
    <x> <y> <layer>              absolute coordinates, 1-based layer
    ...
    <adjustment count>
    <x1> <y1> <l1> <x2> <y2> <l2> <capacity>   GCell coordinates

A layer with non-zero vertical capacity is a vertical layer, otherwise it is
horizontal. Blank lines and ``#`` comments are skipped. Every error carries
the line and column where parsing stopped.
"""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

from pydantic import ValidationError

from .errors import BenchmarkParseError, GuideError, HistoryCorruptionError
from .evaluate import Design, QorRecord
from .grid import CapacityAdjustment, GcellGrid, LayerDirection, Net, Node, make_edge

logger = logging.getLogger(__name__)

GUIDE_HEADER = "guides v1"

Token = Tuple[str, int]


@dataclass(frozen=True)
class BenchmarkNet:
    name: str
    number: int
    pins: Tuple[Node, ...]  # GCell coordinates, 0-based layer
    min_width: Optional[int] = None


@dataclass(frozen=True)
class Benchmark:
    name: str
    dims: Tuple[int, int, int]
    vertical_capacity: Tuple[int, ...]
    horizontal_capacity: Tuple[int, ...]
    min_width: Tuple[int, ...]
    min_spacing: Tuple[int, ...]
    via_spacing: Tuple[int, ...]
    origin: Tuple[int, int]
    tile: Tuple[int, int]
    nets: Tuple[BenchmarkNet, ...]
    adjustments: Tuple[CapacityAdjustment, ...] = ()

    @property
    def layer_dirs(self) -> Tuple[LayerDirection, ...]:
        return tuple(
            LayerDirection.VERTICAL if v > 0 else LayerDirection.HORIZONTAL for v in self.vertical_capacity
        )

    def build_grid(self) -> GcellGrid:
        capacity = [max(v, h) for v, h in zip(self.vertical_capacity, self.horizontal_capacity)]
        return GcellGrid(
            dims=self.dims,
            tile=self.tile,
            layer_dirs=self.layer_dirs,
            layer_capacity=capacity,
            adjustments=self.adjustments,
        )

    def to_design(self) -> Design:
        nets = tuple(Net(id=n.name, pins=n.pins) for n in self.nets)
        return Design(name=self.name, grid=self.build_grid(), nets=nets)


# ----- parsing ---------------------------------------------------------------

class _Lines:
    """Non-blank, comment-free lines as (line number, [(token, column)])."""

    def __init__(self, text: str):
        self._rows: List[Tuple[int, List[Token]]] = []
        self._last = 0
        for number, raw in enumerate(text.splitlines(), start=1):
            self._last = number
            content = raw.split("#", 1)[0]
            tokens = [(m.group(), m.start() + 1) for m in re.finditer(r"\S+", content)]
            if tokens:
                self._rows.append((number, tokens))
        self._position = 0

    def exhausted(self) -> bool:
        return self._position >= len(self._rows)

    def next(self, expected: str) -> Tuple[int, List[Token]]:
        if self.exhausted():
            raise BenchmarkParseError(f"unexpected end of input, expected {expected}", self._last + 1, 1)
        row = self._rows[self._position]
        self._position += 1
        return row


def _int(token: Token, line: int, what: str, minimum: Optional[int] = None) -> int:
    text, column = token
    try:
        value = int(text)
    except ValueError:
        raise BenchmarkParseError(f"{what} must be an integer, got '{text}'", line, column) from None
    if minimum is not None and value < minimum:
        raise BenchmarkParseError(f"{what} must be >= {minimum}, got {value}", line, column)
    return value


def _expect_words(tokens: List[Token], words: Sequence[str], line: int) -> None:
    for i, word in enumerate(words):
        if i >= len(tokens) or tokens[i][0].lower() != word:
            column = tokens[i][1] if i < len(tokens) else (tokens[-1][1] + len(tokens[-1][0]) if tokens else 1)
            raise BenchmarkParseError(f"expected '{' '.join(words)}'", line, column)


def _expect_count(tokens: List[Token], count: int, line: int, what: str) -> None:
    if len(tokens) != count:
        column = tokens[count][1] if len(tokens) > count else tokens[-1][1] + len(tokens[-1][0])
        raise BenchmarkParseError(f"{what} takes {count} fields, got {len(tokens)}", line, column)


def _per_layer(lines: _Lines, words: Sequence[str], layers: int) -> Tuple[Tuple[int, ...], int]:
    line, tokens = lines.next(" ".join(words))
    _expect_words(tokens, words, line)
    values = tokens[len(words):]
    _expect_count(tokens, len(words) + layers, line, " ".join(words))
    return tuple(_int(t, line, " ".join(words), minimum=0) for t in values), line


def parse_benchmark(text: str, name: str = "benchmark") -> Benchmark:
    lines = _Lines(text)

    line, tokens = lines.next("grid header")
    _expect_words(tokens, ["grid"], line)
    _expect_count(tokens, 4, line, "grid")
    nx, ny, nl = (_int(t, line, "grid dimension", minimum=1) for t in tokens[1:])

    vertical, _ = _per_layer(lines, ["vertical", "capacity"], nl)
    horizontal, capacity_line = _per_layer(lines, ["horizontal", "capacity"], nl)
    for layer, (v, h) in enumerate(zip(vertical, horizontal), start=1):
        if v > 0 and h > 0:
            raise BenchmarkParseError(f"layer {layer} has both vertical and horizontal capacity", capacity_line, 1)
    if nx > 1 and all(v > 0 for v in vertical):
        raise BenchmarkParseError("no horizontal layer on a multi-column grid", capacity_line, 1)
    if ny > 1 and not any(v > 0 for v in vertical):
        raise BenchmarkParseError("no vertical layer on a multi-row grid", capacity_line, 1)
    min_width, _ = _per_layer(lines, ["minimum", "width"], nl)
    min_spacing, _ = _per_layer(lines, ["minimum", "spacing"], nl)
    via_spacing, _ = _per_layer(lines, ["via", "spacing"], nl)

    line, tokens = lines.next("origin and tile size")
    _expect_count(tokens, 4, line, "origin/tile line")
    ox = _int(tokens[0], line, "origin x")
    oy = _int(tokens[1], line, "origin y")
    tw = _int(tokens[2], line, "tile width", minimum=1)
    th = _int(tokens[3], line, "tile height", minimum=1)

    line, tokens = lines.next("'num net N'")
    _expect_words(tokens, ["num", "net"], line)
    _expect_count(tokens, 3, line, "num net")
    net_count = _int(tokens[2], line, "net count", minimum=0)

    nets: List[BenchmarkNet] = []
    names = set()
    for _ in range(net_count):
        line, tokens = lines.next("net header")
        if len(tokens) not in (3, 4):
            raise BenchmarkParseError("net header is '<name> <id> <pins> [min width]'", line, tokens[0][1])
        net_name = tokens[0][0]
        if net_name in names:
            raise BenchmarkParseError(f"duplicate net name '{net_name}'", line, tokens[0][1])
        names.add(net_name)
        number = _int(tokens[1], line, "net id", minimum=0)
        pin_count = _int(tokens[2], line, "pin count", minimum=1)
        width = _int(tokens[3], line, "net min width", minimum=0) if len(tokens) == 4 else None
        pins: List[Node] = []
        for _ in range(pin_count):
            line, tokens = lines.next(f"pin of net '{net_name}'")
            _expect_count(tokens, 3, line, "pin")
            x = _int(tokens[0], line, "pin x")
            y = _int(tokens[1], line, "pin y")
            layer = _int(tokens[2], line, "pin layer")
            gx, gy = (x - ox) // tw, (y - oy) // th
            if not (0 <= gx < nx and 0 <= gy < ny):
                raise BenchmarkParseError(f"pin ({x}, {y}) lies outside the die", line, tokens[0][1])
            if not 1 <= layer <= nl:
                raise BenchmarkParseError(f"pin layer {layer} outside 1..{nl}", line, tokens[2][1])
            pins.append((gx, gy, layer - 1))
        nets.append(BenchmarkNet(name=net_name, number=number, pins=tuple(pins), min_width=width))

    adjustments: List[CapacityAdjustment] = []
    if not lines.exhausted():
        line, tokens = lines.next("adjustment count")
        _expect_count(tokens, 1, line, "adjustment count")
        adjustment_count = _int(tokens[0], line, "adjustment count", minimum=0)
        for _ in range(adjustment_count):
            line, tokens = lines.next("capacity adjustment")
            _expect_count(tokens, 7, line, "capacity adjustment")
            x1, y1, l1, x2, y2, l2 = (_int(t, line, "adjustment coordinate") for t in tokens[:6])
            capacity = _int(tokens[6], line, "adjusted capacity", minimum=0)
            a, b = (x1, y1, l1 - 1), (x2, y2, l2 - 1)
            if not _is_lattice_edge(a, b, (nx, ny, nl), vertical):
                raise BenchmarkParseError(f"{a}-{b} is not an edge of the grid", line, tokens[0][1])
            adjustments.append(CapacityAdjustment(make_edge(a, b), capacity))
        if not lines.exhausted():
            line, tokens = lines.next("end of input")
            raise BenchmarkParseError("unexpected content after adjustments", line, tokens[0][1])

    return Benchmark(
        name=name,
        dims=(nx, ny, nl),
        vertical_capacity=vertical,
        horizontal_capacity=horizontal,
        min_width=min_width,
        min_spacing=min_spacing,
        via_spacing=via_spacing,
        origin=(ox, oy),
        tile=(tw, th),
        nets=tuple(nets),
        adjustments=tuple(adjustments),
    )


def _is_lattice_edge(a: Node, b: Node, dims: Tuple[int, int, int], vertical: Sequence[int]) -> bool:
    nx, ny, nl = dims
    for x, y, l in (a, b):
        if not (0 <= x < nx and 0 <= y < ny and 0 <= l < nl):
            return False
    dx, dy, dl = abs(a[0] - b[0]), abs(a[1] - b[1]), abs(a[2] - b[2])
    if (dx, dy, dl) == (0, 0, 1):
        return True
    if dl != 0 or dx + dy != 1:
        return False
    is_vertical = vertical[a[2]] > 0
    return dy == 1 if is_vertical else dx == 1


def load_benchmark(path) -> Benchmark:
    path = Path(path)
    benchmark = parse_benchmark(path.read_text(encoding="utf-8"), name=path.stem)
    logger.info("loaded %s: grid %s, %d nets", benchmark.name, benchmark.dims, len(benchmark.nets))
    return benchmark


def emit_benchmark(benchmark: Benchmark) -> str:
    ox, oy = benchmark.origin
    tw, th = benchmark.tile

    def row(values: Iterable[int]) -> str:
        return " ".join(str(v) for v in values)

    out = [
        f"grid {row(benchmark.dims)}",
        f"vertical capacity {row(benchmark.vertical_capacity)}",
        f"horizontal capacity {row(benchmark.horizontal_capacity)}",
        f"minimum width {row(benchmark.min_width)}",
        f"minimum spacing {row(benchmark.min_spacing)}",
        f"via spacing {row(benchmark.via_spacing)}",
        f"{ox} {oy} {tw} {th}",
        "",
        f"num net {len(benchmark.nets)}",
    ]
    for net in benchmark.nets:
        header = f"{net.name} {net.number} {len(net.pins)}"
        out.append(header if net.min_width is None else f"{header} {net.min_width}")
        out.extend(f"{ox + x * tw} {oy + y * th} {l + 1}" for x, y, l in net.pins)
    out.append("")
    out.append(str(len(benchmark.adjustments)))
    for adjustment in benchmark.adjustments:
        (x1, y1, l1), (x2, y2, l2) = adjustment.edge
        out.append(f"{x1} {y1} {l1 + 1} {x2} {y2} {l2 + 1} {adjustment.capacity}")
    return "\n".join(out) + "\n"


# ----- guides ----------------------------------------------------------------

def emit_guides(nets: Sequence[Net]) -> str:
    """``guides v1 <count>`` then per net ``<id> <edge count>`` and its edges
    as ``x1 y1 l1 x2 y2 l2`` (1-based layers) in ascending order."""
    out = [f"{GUIDE_HEADER} {len(nets)}"]
    for net in nets:
        if net.route is None:
            raise GuideError(f"net '{net.id}' is not routed")
        edges = sorted(net.route.edges)
        out.append(f"{net.id} {len(edges)}")
        for (x1, y1, l1), (x2, y2, l2) in edges:
            out.append(f"{x1} {y1} {l1 + 1} {x2} {y2} {l2 + 1}")
    return "\n".join(out) + "\n"


# ----- history ---------------------------------------------------------------

def encode_record(record: QorRecord) -> str:
    return json.dumps(record.model_dump(mode="json"), sort_keys=True, separators=(",", ":")) + "\n"


def emit_history(records: Iterable[QorRecord]) -> str:
    return "".join(encode_record(r) for r in records)


def parse_history(text: str) -> List[QorRecord]:
    """Decode ``qor_history.jsonl``; any damaged line is a located error."""
    if not text:
        return []
    lines = text.split("\n")
    if lines[-1] != "":
        raise HistoryCorruptionError("record is not newline-terminated (truncated write?)", len(lines))
    records: List[QorRecord] = []
    for number, line in enumerate(lines[:-1], start=1):
        try:
            record = QorRecord.model_validate_json(line)
        except ValidationError as exc:
            raise HistoryCorruptionError(exc.errors()[0]["msg"] if exc.errors() else str(exc), number) from None
        if record.iteration != len(records):
            raise HistoryCorruptionError(
                f"expected iteration {len(records)}, found {record.iteration}", number
            )
        records.append(record)
    return records

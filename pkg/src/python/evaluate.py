"""
Two-stage evaluation of a candidate strategy.

Global routing runs on the coarse lattice, then a detailed-routing proxy
reroutes every net on an F-times finer lattice restricted to a corridor
around its global route. The DR stage always uses the baseline cost so QoR
differences come from the guides alone. Pins never move (iso-placement).
"""
from __future__ import annotations

import logging
import time
from time import monotonic
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, List, Literal, Optional, Sequence, Set, Tuple, Union

import psutil
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import MissingRouteError, ResourceLimitExceeded, StrategyError
from .grid import GcellGrid, Net, Point, QorVector, RouteTree, metrics, overflow, tree_metrics
from .router import GlobalRouter, Guard, RoutingStats
from .strategy import OrderPolicy, RouterStrategy, baseline_strategy, load_strategy

logger = logging.getLogger(__name__)

HISTORY_SCHEMA_VERSION = 1
DEFAULT_EXPANSION = 2
DEFAULT_SLACK = 1
MAX_CORRIDOR_SLACK = 3
DR_NEGOTIATION_ROUNDS = 4


class EvalStatus(str, Enum):
    OK = "ok"
    BUILD_ERROR = "build-error"
    RUN_ERROR = "run-error"
    INFEASIBLE = "infeasible"


class QorRecord(BaseModel):
    """One line of ``qor_history.jsonl``."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    v: Literal[1] = HISTORY_SCHEMA_VERSION
    candidate_id: str
    iteration: int = Field(0, ge=0)
    status: EvalStatus
    qor: Optional[QorVector] = None
    repair_attempts: int = Field(0, ge=0)
    note: str = ""

    @model_validator(mode="after")
    def _qor_only_when_ok(self) -> "QorRecord":
        if self.status is EvalStatus.OK and self.qor is None:
            raise ValueError("ok records carry a qor vector")
        if self.status is not EvalStatus.OK and self.qor is not None:
            raise ValueError(f"{self.status.value} records carry no qor vector")
        return self

    @property
    def ok(self) -> bool:
        return self.status is EvalStatus.OK

    def stamped(self, candidate_id: str, iteration: int, repair_attempts: int = 0, note: Optional[str] = None) -> "QorRecord":
        update = dict(candidate_id=candidate_id, iteration=iteration, repair_attempts=repair_attempts)
        if note is not None:
            update["note"] = note
        return self.model_copy(update=update)


# ----- clocks ----------------------------------------------------------------

class WallClock:
    def now(self) -> float:
        return time.perf_counter()


class FakeClock:
    """Advances by ``step`` seconds on every reading."""

    def __init__(self, step: float = 1.0, start: float = 0.0):
        self.step = step
        self._now = start

    def now(self) -> float:
        current = self._now
        self._now += self.step
        return current


Clock = Union[WallClock, FakeClock]


@dataclass(frozen=True)
class ResourceLimits:
    time_limit_s: Optional[float] = 60.0
    memory_limit_mb: Optional[float] = None


@dataclass
class Design:
    """Fixed placement: a capacity lattice plus the nets' pins."""
    name: str
    grid: GcellGrid
    nets: Tuple[Net, ...]


# ----- detailed-routing proxy ------------------------------------------------

@dataclass
class DetailResult:
    grid: GcellGrid
    nets: List[Net]
    unrouted: List[str] = field(default_factory=list)
    stats: RoutingStats = field(default_factory=RoutingStats)


def refine_net(net: Net, factor: int) -> Net:
    return Net(id=net.id, pins=tuple((factor * x, factor * y, l) for x, y, l in net.pins))


def corridor_cells(tree: RouteTree, factor: int, slack: int, dims: Tuple[int, int]) -> Set[Point]:
    """Fine cells of the GCells within Chebyshev distance ``slack`` of the tree."""
    nx, ny = dims
    covered = {(x, y) for x, y, _ in tree.nodes()}
    dilated = {
        (x + dx, y + dy)
        for x, y in covered
        for dx in range(-slack, slack + 1)
        for dy in range(-slack, slack + 1)
        if 0 <= x + dx < nx and 0 <= y + dy < ny
    }
    return {
        (cx * factor + i, cy * factor + j)
        for cx, cy in dilated
        for i in range(factor)
        for j in range(factor)
    }


def dr_proxy(
    grid: GcellGrid,
    nets: Sequence[Net],
    order_policy: OrderPolicy = OrderPolicy.HPWL_ASC,
    expansion: int = DEFAULT_EXPANSION,
    slack: int = DEFAULT_SLACK,
    guard: Optional[Guard] = None,
) -> DetailResult:
    """Reroute the GR result on the refined lattice inside per-net corridors.

    A net that cannot be connected inside its corridor gets the corridor
    widened one GCell at a time up to slack 3; after that it stays unrouted.
    """
    if expansion < 1:
        raise ValueError("expansion must be positive")
    if slack < 0:
        raise ValueError("corridor slack must be non-negative")
    guides = {}
    for net in nets:
        if net.route is None:
            raise MissingRouteError(net.id)
        guides[net.id] = net.route

    fine = grid.refine(expansion)

    def corridor(net: Net, level: int) -> Optional[Set[Point]]:
        width = slack + level
        if level > 0 and width > MAX_CORRIDOR_SLACK:
            return None
        return corridor_cells(guides[net.id], expansion, width, grid.dims[:2])

    strategy = replace(baseline_strategy(), order_policy=order_policy, rrr_max_rounds=DR_NEGOTIATION_ROUNDS)
    router = GlobalRouter(strategy, fine, corridor=corridor, guard=guard)
    result = router.route_all([refine_net(n, expansion) for n in nets])
    if result.stats.unrouted:
        logger.info("dr proxy left %d nets unrouted", len(result.stats.unrouted))
    return DetailResult(grid=fine, nets=result.nets, unrouted=list(result.stats.unrouted), stats=result.stats)


def detail_metrics(detail: DetailResult) -> Tuple[float, int]:
    wl = 0.0
    vc = 0
    for net in detail.nets:
        if net.route is not None:
            net_wl, net_vc = tree_metrics(detail.grid, net.route)
            wl += net_wl
            vc += net_vc
    return wl, vc


# ----- evaluate --------------------------------------------------------------

def resident_mb() -> float:
    info = psutil.Process().memory_info()
    return info.rss / (1024 * 1024)


class ResourceGuard:
    """In-flight check of the evaluation ceilings.

    Runs on its own monotonic timer so a fake evaluation clock never decides
    whether a candidate is aborted.
    """

    def __init__(self, limits: ResourceLimits, timer: Optional[Callable[[], float]] = None):
        self.limits = limits
        self.timer = timer or monotonic
        self.start = self.timer()

    def __call__(self) -> None:
        limit = self.limits.time_limit_s
        if limit is not None:
            elapsed = self.timer() - self.start
            if elapsed > limit:
                raise ResourceLimitExceeded(f"time limit exceeded: {elapsed:.3f}s > {limit}s")
        ceiling = self.limits.memory_limit_mb
        if ceiling is not None:
            used = resident_mb()
            if used > ceiling:
                raise ResourceLimitExceeded(f"memory limit exceeded: {used:.1f}MB > {ceiling}MB")


@dataclass
class FlowResult:
    """Both routing stages of one strategy on one design."""
    grid: GcellGrid
    nets: List[Net]
    stats: RoutingStats
    detail: DetailResult
    qor: QorVector
    gr_rt: float
    dr_rt: float
    peak_mb: float

    @property
    def dr_overflow(self) -> int:
        return overflow(self.detail.grid)[1]

    @property
    def feasible(self) -> bool:
        return self.dr_overflow == 0 and not self.detail.unrouted

    def full_qor(self) -> QorVector:
        dr_wl, dr_vc = detail_metrics(self.detail)
        return self.qor.with_detail(dr_wl=dr_wl, dr_vc=float(dr_vc), dr_rt=self.dr_rt)


def run_flow(
    strategy: RouterStrategy,
    design: Design,
    clock: Optional[Clock] = None,
    expansion: int = DEFAULT_EXPANSION,
    slack: int = DEFAULT_SLACK,
    guard: Optional[Guard] = None,
) -> FlowResult:
    """GR then DR proxy on a fresh copy of the design's grid."""
    clock = clock or WallClock()
    grid = design.grid.fresh()
    peak = resident_mb()
    start = clock.now()
    routed = GlobalRouter(strategy, grid, guard=guard).route_all(design.nets)
    gr_rt = clock.now() - start
    peak = max(peak, resident_mb())
    qor = metrics(grid, routed.nets).with_runtime(gr_rt)

    start = clock.now()
    detail = dr_proxy(grid, routed.nets, strategy.order_policy, expansion, slack, guard)
    dr_rt = clock.now() - start
    peak = max(peak, resident_mb())
    return FlowResult(grid, list(routed.nets), routed.stats, detail, qor, gr_rt, dr_rt, peak)


def _record(status: EvalStatus, note: str, candidate_id: str, iteration: int, qor: Optional[QorVector] = None) -> QorRecord:
    return QorRecord(candidate_id=candidate_id, iteration=iteration, status=status, qor=qor, note=note)


def evaluate(
    strategy: Union[str, RouterStrategy],
    design: Design,
    clock: Optional[Clock] = None,
    *,
    candidate_id: str = "",
    iteration: int = 0,
    limits: Optional[ResourceLimits] = None,
    expansion: int = DEFAULT_EXPANSION,
    slack: int = DEFAULT_SLACK,
) -> QorRecord:
    """Full QoR record for one candidate; candidate faults become statuses."""
    limits = limits or ResourceLimits()
    try:
        if isinstance(strategy, str):
            strategy = load_strategy(strategy)
        else:
            strategy.validate()
    except StrategyError as exc:
        return _record(EvalStatus.BUILD_ERROR, str(exc), candidate_id, iteration)

    try:
        flow = run_flow(strategy, design, clock, expansion, slack, ResourceGuard(limits))
    except ResourceLimitExceeded as exc:
        logger.warning("candidate %s aborted: %s", candidate_id or "<unnamed>", exc)
        return _record(EvalStatus.RUN_ERROR, str(exc), candidate_id, iteration)
    except Exception as exc:  # any router fault is the candidate's failure
        logger.warning("candidate %s crashed: %s", candidate_id or "<unnamed>", exc)
        return _record(EvalStatus.RUN_ERROR, f"{type(exc).__name__}: {exc}", candidate_id, iteration)

    elapsed = flow.gr_rt + flow.dr_rt
    if limits.time_limit_s is not None and elapsed > limits.time_limit_s:
        return _record(
            EvalStatus.RUN_ERROR,
            f"time limit exceeded: {elapsed:.3f}s > {limits.time_limit_s}s",
            candidate_id,
            iteration,
        )
    if limits.memory_limit_mb is not None and flow.peak_mb > limits.memory_limit_mb:
        return _record(
            EvalStatus.RUN_ERROR,
            f"memory limit exceeded: {flow.peak_mb:.1f}MB > {limits.memory_limit_mb}MB",
            candidate_id,
            iteration,
        )

    if not flow.feasible:
        return _record(
            EvalStatus.INFEASIBLE,
            f"dr overflow {flow.dr_overflow}, unrouted nets {len(flow.detail.unrouted)}",
            candidate_id,
            iteration,
        )

    qor = flow.full_qor()
    logger.debug("candidate %s: gr_wl %.1f dr_wl %.1f to %d", candidate_id, qor.gr_wl, qor.dr_wl, qor.to)
    return _record(EvalStatus.OK, "", candidate_id, iteration, qor)


def evaluation_runner(
    design: Design,
    clock_factory: Callable[[], Clock] = WallClock,
    limits: Optional[ResourceLimits] = None,
    expansion: int = DEFAULT_EXPANSION,
    slack: int = DEFAULT_SLACK,
) -> Callable[..., QorRecord]:
    """Bind a design and settings; every call gets a fresh clock."""

    def run(strategy: Union[str, RouterStrategy], candidate_id: str = "", iteration: int = 0) -> QorRecord:
        return evaluate(
            strategy,
            design,
            clock_factory(),
            candidate_id=candidate_id,
            iteration=iteration,
            limits=limits,
            expansion=expansion,
            slack=slack,
        )

    return run

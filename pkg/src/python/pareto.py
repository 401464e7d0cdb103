"""Dominance, Pareto fronts, router selection and percent deltas over QoR history."""
from __future__ import annotations

from enum import Enum
from typing import List, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator

from .errors import SelectionError, UndefinedDeltaError
from .evaluate import QorRecord
from .grid import METRIC_KEYS, QorVector

FRONT_KEYS: Tuple[str, ...] = ("dr_wl", "gr_rt")


class Direction(str, Enum):
    MINIMIZE = "min"
    MAXIMIZE = "max"


class Objective(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    key: str
    direction: Direction = Direction.MINIMIZE


def _default_objectives() -> List[Objective]:
    return [Objective(key="dr_wl"), Objective(key="dr_vc"), Objective(key="gr_rt")]


class ObjectiveSpec(BaseModel):
    """Prioritized objective hierarchy, highest priority first."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    objectives: List[Objective] = Field(default_factory=_default_objectives)

    @field_validator("objectives")
    @classmethod
    def _known_and_distinct(cls, objectives: List[Objective]) -> List[Objective]:
        if not objectives:
            raise ValueError("at least one objective is required")
        keys = [o.key for o in objectives]
        unknown = [k for k in keys if k not in METRIC_KEYS]
        if unknown:
            raise ValueError(f"unknown metric keys {unknown}")
        if len(set(keys)) != len(keys):
            raise ValueError(f"objective keys must be distinct, got {keys}")
        return objectives

    @property
    def keys(self) -> Tuple[str, ...]:
        return tuple(o.key for o in self.objectives)

    def oriented(self, qor: QorVector) -> Tuple[float, ...]:
        """Values turned into minimization form."""
        return tuple(
            qor.value(o.key) if o.direction is Direction.MINIMIZE else -qor.value(o.key) for o in self.objectives
        )


Keys = Union[Sequence[str], ObjectiveSpec]


def _values(qor: QorVector, keys: Keys) -> Tuple[float, ...]:
    if isinstance(keys, ObjectiveSpec):
        return keys.oriented(qor)
    return tuple(qor.value(k) for k in keys)


def dominates(a: QorVector, b: QorVector, keys: Keys = FRONT_KEYS) -> bool:
    va, vb = _values(a, keys), _values(b, keys)
    return all(x <= y for x, y in zip(va, vb)) and any(x < y for x, y in zip(va, vb))


def front(records: Sequence[QorRecord], keys: Keys = FRONT_KEYS) -> List[QorRecord]:
    """Ok records not dominated by any other ok record, ordered by iteration."""
    ok = [r for r in records if r.ok]
    kept = [r for r in ok if not any(dominates(o.qor, r.qor, keys) for o in ok if o is not r)]
    return sorted(kept, key=lambda r: r.iteration)


def select_record(
    records: Sequence[QorRecord],
    baseline: QorRecord,
    spec: Optional[ObjectiveSpec] = None,
) -> QorRecord:
    """Prefer records beating the baseline on both dr_wl and gr_rt; otherwise
    take the best dr_wl. Ties follow the objective order, then the lowest iteration."""
    spec = spec or ObjectiveSpec()
    if not baseline.ok:
        raise SelectionError(f"baseline record has status {baseline.status.value}")
    ok = [r for r in records if r.ok]
    if not ok:
        raise SelectionError("no record with status ok")
    base = baseline.qor
    improving = [r for r in ok if r.qor.dr_wl < base.dr_wl and r.qor.gr_rt < base.gr_rt]
    if improving:
        return min(improving, key=lambda r: (spec.oriented(r.qor), r.iteration))
    return min(ok, key=lambda r: (r.qor.dr_wl, spec.oriented(r.qor), r.iteration))


def select(records: Sequence[QorRecord], baseline: QorRecord, spec: Optional[ObjectiveSpec] = None) -> str:
    return select_record(records, baseline, spec).candidate_id


def delta(baseline: float, ours: float) -> float:
    """Percent change, positive when ``ours`` is lower."""
    if baseline <= 0:
        raise UndefinedDeltaError(f"delta undefined for baseline value {baseline}")
    return (baseline - ours) / baseline * 100.0

"""
Closed-loop router evolution.

Every iteration rebuilds its context from the run directory alone: the QoR
history picks the parent (best router so far), the store supplies its
document, a provider proposes a patch, and the patched strategy is
evaluated. Faults are repaired within the iteration up to the repair budget;
whatever the outcome, exactly one candidate and one history record are
persisted per iteration.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import git

from .benchmark_io import load_benchmark
from .config import EvolutionConfig, dump_config, load_config
from .errors import (
    BenchmarkParseError,
    ConfigurationError,
    HistoryCorruptionError,
    MutationError,
    PatchRejected,
    StrategyError,
)
from .evaluate import Design, EvalStatus, QorRecord, evaluation_runner
from .mlflow_utils import RunTracker
from .mutate import MutationContext, MutationProvider, Patch, VersionEntry, apply_patch, make_provider
from .pareto import ObjectiveSpec, select
from .store import CONFIG_SNAPSHOT, HISTORY_FILE, Candidate, CandidateStore, History, RunLock, candidate_id
from .strategy import baseline_document, load_strategy

logger = logging.getLogger(__name__)

RecordCallback = Callable[[QorRecord], None]


@dataclass(frozen=True)
class RunPaths:
    root: Path

    @property
    def snapshot(self) -> Path:
        return self.root / CONFIG_SNAPSHOT

    @property
    def store(self) -> Path:
        return self.root / "store"

    @property
    def history(self) -> Path:
        return self.root / HISTORY_FILE


def load_design(path) -> Design:
    try:
        return load_benchmark(path).to_design()
    except OSError as exc:
        raise ConfigurationError(f"cannot read design {path}: {exc}") from exc
    except (BenchmarkParseError, ValueError) as exc:
        raise ConfigurationError(f"design {path} is invalid: {exc}") from exc


def baseline_text(path: Optional[Path] = None) -> str:
    if path is None:
        return baseline_document()
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read baseline {path}: {exc}") from exc


@dataclass(frozen=True)
class WarmStart:
    doc: str
    record: QorRecord
    summary: str


def warm_start_init(
    source_run,
    evaluate: Callable[..., QorRecord],
    spec: Optional[ObjectiveSpec] = None,
    chosen: Optional[str] = None,
    fallback_doc: Optional[str] = None,
) -> WarmStart:
    """Iteration-0 candidate from another run's selected router.

    The record is always re-evaluated on the target design. When the
    candidate is not feasible there, the stock baseline is used instead and
    the record's note says so.
    """
    paths = RunPaths(Path(source_run))
    records = History(paths.history).read()
    if not records:
        raise ConfigurationError(f"warm-start source {paths.root} has no history")
    cid = chosen or select(records, records[0], spec)
    try:
        doc = CandidateStore(paths.store).get(cid)
    except KeyError as exc:
        raise ConfigurationError(str(exc)) from exc
    try:
        load_strategy(doc)
    except StrategyError as exc:
        raise ConfigurationError(f"warm-start candidate {cid[:12]} does not validate: {exc}") from exc

    record = evaluate(doc, candidate_id=cid, iteration=0)
    if record.ok:
        return WarmStart(doc=doc, record=record, summary=f"warm start from {paths.root.name}:{cid[:12]}")

    logger.warning("warm-start candidate %s is %s on the target; using the stock baseline", cid[:12], record.status.value)
    doc = fallback_doc if fallback_doc is not None else baseline_document()
    base = evaluate(doc, candidate_id=candidate_id(doc), iteration=0)
    note = f"warm-start candidate {cid[:12]} was {record.status.value} on the target design; fell back to the stock baseline"
    return WarmStart(doc=doc, record=base.stamped(base.candidate_id, 0, note=note), summary="baseline (warm-start fallback)")


class Evolution:
    """One run directory, one writer."""

    def __init__(
        self,
        config: EvolutionConfig,
        provider: Optional[MutationProvider] = None,
        on_record: Optional[RecordCallback] = None,
        tracker: Optional[RunTracker] = None,
    ):
        self.config = config
        self.paths = RunPaths(Path(config.run_dir))
        self.provider = provider or make_provider(config.provider, config.seed)
        self.on_record = on_record or (lambda record: None)
        self.tracker = tracker or RunTracker(config)
        self.design = load_design(config.design)
        self.evaluate = evaluation_runner(
            self.design,
            clock_factory=config.clock.factory(),
            limits=config.limits.resource_limits(),
            expansion=config.detail.expansion,
            slack=config.detail.slack,
        )
        self.paths.root.mkdir(parents=True, exist_ok=True)
        self.store = CandidateStore(self.paths.store)
        self.history = History(self.paths.history)

    # ----- persistence ----------------------------------------------------

    def _persist(self, candidate: Candidate, record: QorRecord) -> None:
        self.store.record(candidate)
        self.history.append(record)
        self.tracker.log_record(record)
        self.tracker.log_document(candidate.id, candidate.doc)
        self.on_record(record)

    def initialize(self) -> QorRecord:
        """Iteration 0: the baseline (or warm-start) candidate; must be ok."""
        existing = self.history.read()
        if existing:
            return existing[0]
        if not self.paths.snapshot.exists():
            self.paths.snapshot.write_text(dump_config(self.config), encoding="utf-8")

        stock = baseline_text(self.config.baseline)
        if self.config.warm_start is not None:
            warm = warm_start_init(
                self.config.warm_start.source_run,
                self.evaluate,
                self.config.objective,
                self.config.warm_start.candidate_id,
                fallback_doc=stock,
            )
            doc, record, summary = warm.doc, warm.record, warm.summary
        else:
            doc, summary = stock, "baseline"
            record = self.evaluate(doc, candidate_id=candidate_id(doc), iteration=0)

        if not record.ok:
            raise ConfigurationError(f"baseline is {record.status.value}: {record.note}")
        cid = candidate_id(doc)
        record = record.stamped(cid, 0)
        self._persist(Candidate(id=cid, iteration=0, summary=summary, doc=doc), record)
        logger.info("baseline %s: dr_wl %.1f", cid[:12], record.qor.dr_wl)
        return record

    # ----- one iteration --------------------------------------------------

    def context(self, records: List[QorRecord]) -> Tuple[MutationContext, str]:
        baseline = records[0]
        parent_id = select(records, baseline, self.config.objective)
        version_log = [VersionEntry(candidate_id=c.id, parent_id=c.parent_id, summary=c.summary) for c in self.store.entries()]
        ctx = MutationContext(
            history=records,
            current_doc=self.store.get(parent_id),
            version_log=version_log,
            objective_spec=self.config.objective,
            baseline=baseline,
        )
        return ctx, parent_id

    def step(self, iteration: int) -> QorRecord:
        records = self.history.read()
        if len(records) != iteration:
            raise HistoryCorruptionError(f"history has {len(records)} records before iteration {iteration}", len(records))
        ctx, parent_id = self.context(records)
        attempts = 0
        while True:
            patch: Optional[Patch] = None
            doc: Optional[str] = None
            loc = 0
            try:
                patch = self.provider.propose(ctx)
                applied = apply_patch(ctx.current_doc, patch)
            except MutationError as exc:
                record = QorRecord(candidate_id="", iteration=iteration, status=EvalStatus.BUILD_ERROR,
                                   note=f"mutation error: {exc}")
            except PatchRejected as exc:
                doc = exc.text
                record = QorRecord(candidate_id="", iteration=iteration, status=EvalStatus.BUILD_ERROR,
                                   note=f"patch rejected: {exc}")
            else:
                doc, loc = applied.doc, applied.loc_modified
                record = self.evaluate(doc, candidate_id=candidate_id(doc), iteration=iteration)

            repairable = record.status in (EvalStatus.BUILD_ERROR, EvalStatus.RUN_ERROR)
            if repairable and attempts < self.config.repair_budget:
                attempts += 1
                logger.info("iteration %d attempt %d failed: %s", iteration, attempts, record.note)
                ctx = ctx.with_note(record.note)
                continue
            break

        if doc is None:
            doc = ctx.current_doc
        cid = candidate_id(doc)
        summary = patch.summary if patch is not None and patch.summary else ""
        candidate = Candidate(
            id=cid,
            parent_id=parent_id,
            iteration=iteration,
            patch=patch.render() if patch is not None else "",
            loc_modified=loc,
            summary=summary if record.ok else f"{summary} [{record.status.value}]".strip(),
            doc=doc,
        )
        record = record.stamped(cid, iteration, repair_attempts=attempts)
        self._persist(candidate, record)
        return record

    # ----- driver ---------------------------------------------------------

    def run(self, stop_after: Optional[int] = None) -> Path:
        """Run (or continue) until ``max_iterations``; ``stop_after`` ends early
        once that iteration is persisted."""
        with RunLock(self.paths.root):
            self.tracker.start(run_name=self.paths.root.name)
            try:
                self.initialize()
                start = len(self.history.read())
                for iteration in range(start, self.config.max_iterations + 1):
                    if stop_after is not None and iteration > stop_after:
                        break
                    self.step(iteration)
            finally:
                self.tracker.finish()
        return self.paths.root


def run_evolution(
    config: EvolutionConfig,
    provider: Optional[MutationProvider] = None,
    on_record: Optional[RecordCallback] = None,
    stop_after: Optional[int] = None,
) -> Path:
    return Evolution(config, provider, on_record).run(stop_after)


def open_run(run_dir) -> EvolutionConfig:
    """Config of an existing run, with its store reconciled against the history."""
    paths = RunPaths(Path(run_dir))
    if not paths.snapshot.exists():
        raise ConfigurationError(f"{paths.root} has no {CONFIG_SNAPSHOT}")
    config = load_config(paths.snapshot).model_copy(update={"run_dir": paths.root})
    records = History(paths.history).read()
    store = CandidateStore(paths.store)
    store.reconcile(len(records))
    for number, record in enumerate(records, start=1):
        if not store.exists(record.candidate_id):
            raise HistoryCorruptionError(f"candidate {record.candidate_id[:12]} is missing from the store", number)
    return config


def resume(
    run_dir,
    provider: Optional[MutationProvider] = None,
    on_record: Optional[RecordCallback] = None,
    stop_after: Optional[int] = None,
) -> Path:
    config = open_run(run_dir)
    return Evolution(config, provider, on_record).run(stop_after)


def export_git(run_dir, repo_path) -> int:
    """Replay the candidate chain as commits (document plus QoR record each)."""
    paths = RunPaths(Path(run_dir))
    records = {r.iteration: r for r in History(paths.history).read()}
    entries = sorted(CandidateStore(paths.store).entries(), key=lambda c: c.iteration)
    repo_path = Path(repo_path)
    repo = git.Repo.init(repo_path)
    actor = git.Actor("router-evolve", "router-evolve@localhost")
    commits = 0
    for entry in entries:
        record = records.get(entry.iteration)
        (repo_path / "strategy.txt").write_text(entry.doc, encoding="utf-8")
        qor = record.model_dump(mode="json") if record is not None else {}
        (repo_path / "qor.json").write_text(json.dumps(qor, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        repo.index.add(["strategy.txt", "qor.json"])
        status = record.status.value if record is not None else "unknown"
        message = (
            f"iteration {entry.iteration}: {entry.summary or 'candidate'}\n\n"
            f"candidate: {entry.id}\nparent: {entry.parent_id or '-'}\nstatus: {status}\n"
            f"loc_modified: {entry.loc_modified}\n"
        )
        repo.index.commit(message, author=actor, committer=actor)
        commits += 1
    logger.info("exported %d commits to %s", commits, repo_path)
    return commits

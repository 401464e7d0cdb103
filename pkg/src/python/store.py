"""
Run-directory persistence: content-addressed candidate store, append-only
QoR history and the single-writer lock.

    <run>/config.snapshot
    <run>/store/objects/<sha256>     StrategyDoc bytes
    <run>/store/log                  one JSON candidate entry per line
    <run>/qor_history.jsonl          one QorRecord per line
    <run>/lock                       PID of the writer
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Dict, List, Optional

import psutil
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .benchmark_io import encode_record, parse_history
from .errors import HistoryCorruptionError, RunLockedError
from .evaluate import QorRecord

logger = logging.getLogger(__name__)

CONFIG_SNAPSHOT = "config.snapshot"
HISTORY_FILE = "qor_history.jsonl"
LOCK_FILE = "lock"


def candidate_id(doc: str) -> str:
    return hashlib.sha256(doc.encode("utf-8")).hexdigest()


def _write_atomic(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(data)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def _read_text(path: Path, prefix: str = "") -> str:
    """Whole file as text; undecodable bytes are reported with their line."""
    raw = path.read_bytes()
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        line = raw.count(b"\n", 0, exc.start) + 1
        raise HistoryCorruptionError(f"{prefix}invalid UTF-8 at byte {exc.start}", line) from None


class Candidate(BaseModel):
    """A stored strategy version; ``doc`` lives in the object store."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    id: str
    parent_id: Optional[str] = None
    iteration: int = Field(ge=0)
    patch: str = ""
    loc_modified: int = Field(0, ge=0)
    summary: str = ""
    doc: str = Field("", exclude=True)


class CandidateStore:
    """Objects keyed by the SHA-256 of the document, plus a line-oriented log."""

    def __init__(self, root):
        self.root = Path(root)
        self.objects = self.root / "objects"
        self.log_path = self.root / "log"
        self.objects.mkdir(parents=True, exist_ok=True)

    def put(self, doc: str) -> str:
        cid = candidate_id(doc)
        path = self.objects / cid
        if not path.exists():
            _write_atomic(path, doc.encode("utf-8"))
        return cid

    def exists(self, cid: str) -> bool:
        return (self.objects / cid).exists()

    def get(self, cid: str) -> str:
        path = self.objects / cid
        if not path.exists():
            raise KeyError(f"candidate {cid} is not in the store")
        return path.read_text(encoding="utf-8")

    def record(self, candidate: Candidate) -> Candidate:
        """Store the document and append the log entry."""
        cid = self.put(candidate.doc)
        if cid != candidate.id:
            raise ValueError(f"candidate id {candidate.id} does not match its document hash {cid}")
        line = json.dumps(candidate.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        with open(self.log_path, "a", encoding="utf-8") as f:
            f.write(line + "\n")
            f.flush()
            os.fsync(f.fileno())
        return candidate

    def entries(self) -> List[Candidate]:
        if not self.log_path.exists():
            return []
        found = []
        for number, line in enumerate(_read_text(self.log_path, "store log: ").splitlines(), start=1):
            if not line.strip():
                continue
            try:
                entry = Candidate.model_validate_json(line)
            except ValidationError as exc:
                raise HistoryCorruptionError(f"store log: {exc.errors()[0]['msg']}", number) from None
            found.append(entry.model_copy(update={"doc": self.get(entry.id)}))
        return found

    def by_id(self) -> Dict[str, Candidate]:
        """First entry per id; later entries re-record an existing document."""
        found: Dict[str, Candidate] = {}
        for entry in self.entries():
            found.setdefault(entry.id, entry)
        return found

    def reconcile(self, iterations: int) -> int:
        """Drop log entries for iterations >= ``iterations``; returns how many."""
        entries = self.entries()
        kept = [c for c in entries if c.iteration < iterations]
        if len(kept) != len(entries):
            text = "".join(
                json.dumps(c.model_dump(mode="json"), sort_keys=True, separators=(",", ":")) + "\n" for c in kept
            )
            _write_atomic(self.log_path, text.encode("utf-8"))
            logger.warning("dropped %d store log entries without history records", len(entries) - len(kept))
        return len(entries) - len(kept)

    def lineage(self, cid: str) -> List[str]:
        """Ids from ``cid`` back to the root candidate."""
        entries = self.by_id()
        chain = []
        current: Optional[str] = cid
        while current is not None:
            if current in chain:
                raise ValueError(f"cycle in candidate lineage at {current}")
            chain.append(current)
            entry = entries.get(current)
            current = entry.parent_id if entry else None
        return chain


class History:
    """Append-only ``qor_history.jsonl``."""

    def __init__(self, path):
        self.path = Path(path)

    def read(self) -> List[QorRecord]:
        if not self.path.exists():
            return []
        return parse_history(_read_text(self.path))

    def append(self, record: QorRecord) -> None:
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(encode_record(record))
            f.flush()
            os.fsync(f.fileno())


class RunLock:
    """Exclusive writer lock holding the owner's PID; dead owners are stale."""

    def __init__(self, run_dir):
        self.path = Path(run_dir) / LOCK_FILE
        self.held = False

    def _owner(self) -> Optional[int]:
        try:
            return int(self.path.read_text(encoding="utf-8").strip())
        except (OSError, ValueError):
            return None

    def acquire(self) -> "RunLock":
        """The PID is written to a private file first and hard-linked into
        place, so a lock file is never visible without its owner."""
        self.path.parent.mkdir(parents=True, exist_ok=True)
        staged = self.path.with_name(f"{self.path.name}.{os.getpid()}")
        staged.write_text(f"{os.getpid()}\n", encoding="utf-8")
        try:
            while True:
                try:
                    os.link(staged, self.path)
                except FileExistsError:
                    owner = self._owner()
                    if owner is not None and owner != os.getpid() and psutil.pid_exists(owner):
                        raise RunLockedError(f"{self.path.parent} is locked by process {owner}") from None
                    logger.warning("removing stale lock of process %s", owner)
                    self.path.unlink(missing_ok=True)
                    continue
                self.held = True
                return self
        finally:
            staged.unlink(missing_ok=True)

    def release(self) -> None:
        if self.held:
            self.path.unlink(missing_ok=True)
            self.held = False

    def __enter__(self) -> "RunLock":
        return self.acquire()

    def __exit__(self, *exc) -> None:
        self.release()

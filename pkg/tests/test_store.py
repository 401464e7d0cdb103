"""
Tests for the candidate store, QoR history file and run lock.
"""
import os
from pathlib import Path

import pytest

from src.python.errors import HistoryCorruptionError, RunLockedError
from src.python.evaluate import EvalStatus, QorRecord
from src.python.benchmark_io import encode_record
from src.python.store import Candidate, CandidateStore, History, RunLock, candidate_id


def candidate(doc, iteration, parent=None):
    return Candidate(id=candidate_id(doc), parent_id=parent, iteration=iteration, doc=doc, summary=f"v{iteration}")


@pytest.fixture
def store(tmp_path):
    return CandidateStore(tmp_path / "store")


class TestCandidateStore:
    """Content-addressed objects and the candidate log."""

    def test_id_is_sha256_of_document(self):
        assert candidate_id("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"

    def test_put_get(self, store):
        cid = store.put("seed = 1\n")
        assert store.exists(cid)
        assert store.get(cid) == "seed = 1\n"
        assert store.put("seed = 1\n") == cid

    def test_get_missing(self, store):
        with pytest.raises(KeyError):
            store.get("0" * 64)

    def test_record_checks_id(self, store):
        bad = Candidate(id="0" * 64, iteration=0, doc="x\n")
        with pytest.raises(ValueError):
            store.record(bad)

    def test_entries_carry_documents(self, store):
        store.record(candidate("a\n", 0))
        store.record(candidate("b\n", 1, parent=candidate_id("a\n")))
        entries = store.entries()
        assert [e.doc for e in entries] == ["a\n", "b\n"]
        assert entries[1].parent_id == entries[0].id

    def test_log_omits_document_text(self, store):
        store.record(candidate("secret-doc\n", 0))
        assert "secret-doc" not in store.log_path.read_text()

    def test_by_id_keeps_first(self, store):
        store.record(candidate("a\n", 0))
        store.record(candidate("a\n", 3))
        assert store.by_id()[candidate_id("a\n")].iteration == 0

    def test_reconcile_drops_orphans(self, store):
        for i, doc in enumerate(["a\n", "b\n", "c\n"]):
            store.record(candidate(doc, i))
        assert store.reconcile(2) == 1
        assert [e.iteration for e in store.entries()] == [0, 1]
        assert store.reconcile(2) == 0

    def test_lineage(self, store):
        a = candidate("a\n", 0)
        b = candidate("b\n", 1, parent=a.id)
        c = candidate("c\n", 2, parent=b.id)
        for entry in (a, b, c):
            store.record(entry)
        assert store.lineage(c.id) == [c.id, b.id, a.id]

    def test_damaged_log_line(self, store):
        store.record(candidate("a\n", 0))
        with open(store.log_path, "a") as f:
            f.write('{"id": 5}\n')
        with pytest.raises(HistoryCorruptionError) as exc:
            store.entries()
        assert exc.value.line == 2

    def test_undecodable_log_line(self, store):
        store.record(candidate("a\n", 0))
        with open(store.log_path, "ab") as f:
            f.write(b"\xff\xfe\n")
        with pytest.raises(HistoryCorruptionError, match="invalid UTF-8") as exc:
            store.entries()
        assert exc.value.line == 2


class TestHistory:
    def test_append_and_read(self, tmp_path):
        history = History(tmp_path / "qor_history.jsonl")
        assert history.read() == []
        record = QorRecord(candidate_id="c", iteration=0, status=EvalStatus.RUN_ERROR, note="x")
        history.append(record)
        assert history.read() == [record]

    def test_undecodable_line_is_located(self, tmp_path):
        path = tmp_path / "qor_history.jsonl"
        record = QorRecord(candidate_id="c", iteration=0, status=EvalStatus.RUN_ERROR, note="x")
        path.write_bytes(encode_record(record).encode("utf-8") + b'{"note":"\xc3\x28"}\n')
        with pytest.raises(HistoryCorruptionError) as exc:
            History(path).read()
        assert exc.value.line == 2


class TestRunLock:
    """One writer per run directory."""

    def test_acquire_release(self, tmp_path):
        with RunLock(tmp_path) as lock:
            assert lock.path.read_text().strip() == str(os.getpid())
        assert not lock.path.exists()

    def test_live_owner_blocks(self, tmp_path):
        (tmp_path / "lock").write_text(f"{os.getppid()}\n")
        with pytest.raises(RunLockedError):
            RunLock(tmp_path).acquire()

    def test_own_stale_lock_is_replaced(self, tmp_path):
        (tmp_path / "lock").write_text(f"{os.getpid()}\n")
        lock = RunLock(tmp_path).acquire()
        assert lock.held
        lock.release()

    def test_garbage_lock_is_stale(self, tmp_path):
        (tmp_path / "lock").write_text("not a pid\n")
        with RunLock(tmp_path) as lock:
            assert lock.held

    def test_lock_appears_with_its_pid(self, tmp_path, monkeypatch):
        linked = []
        real_link = os.link

        def link(src, dst):
            linked.append(Path(src).read_text())
            real_link(src, dst)

        monkeypatch.setattr("src.python.store.os.link", link)
        lock = RunLock(tmp_path).acquire()
        assert linked == [f"{os.getpid()}\n"]
        assert [p.name for p in tmp_path.iterdir()] == ["lock"]
        lock.release()
        assert list(tmp_path.iterdir()) == []

    def test_staged_file_removed_when_locked(self, tmp_path):
        (tmp_path / "lock").write_text(f"{os.getppid()}\n")
        with pytest.raises(RunLockedError):
            RunLock(tmp_path).acquire()
        assert [p.name for p in tmp_path.iterdir()] == ["lock"]

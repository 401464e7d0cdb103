"""
Tests for dominance, fronts, selection and deltas.
"""
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.python.errors import SelectionError, UndefinedDeltaError
from src.python.evaluate import EvalStatus, QorRecord
from src.python.grid import QorVector
from src.python.pareto import (
    FRONT_KEYS,
    Direction,
    Objective,
    ObjectiveSpec,
    delta,
    dominates,
    front,
    select,
    select_record,
)


def qor(dr_wl, gr_rt, dr_vc=0.0):
    return QorVector(dr_wl=dr_wl, dr_vc=dr_vc, dr_twl=dr_wl + dr_vc, gr_rt=gr_rt)


def record(i, dr_wl=None, gr_rt=None, dr_vc=0.0, status=EvalStatus.OK):
    if status is not EvalStatus.OK:
        return QorRecord(candidate_id=f"c{i}", iteration=i, status=status)
    return QorRecord(candidate_id=f"c{i}", iteration=i, status=status, qor=qor(dr_wl, gr_rt, dr_vc))


values = st.integers(0, 20).map(float)

histories = st.lists(
    st.tuples(values, values, values, st.sampled_from(list(EvalStatus))),
    min_size=0,
    max_size=30,
).map(lambda rows: [record(0, 10.0, 10.0)] + [
    record(i + 1, wl, rt, vc, status) for i, (wl, rt, vc, status) in enumerate(rows)
])


class TestDominance:
    def test_strict_in_one_key(self):
        assert dominates(qor(1, 1), qor(1, 2))
        assert not dominates(qor(1, 1), qor(1, 1))
        assert not dominates(qor(1, 3), qor(2, 2))

    def test_maximize_direction(self):
        spec = ObjectiveSpec(objectives=[Objective(key="dr_wl", direction=Direction.MAXIMIZE)])
        assert dominates(qor(5, 0), qor(3, 0), spec)


class TestFront:
    """Against the pairwise O(n^2) definition."""

    def test_skips_failed_records(self):
        records = [record(0, 5, 5), record(1, status=EvalStatus.INFEASIBLE), record(2, 4, 6)]
        assert [r.iteration for r in front(records)] == [0, 2]

    @settings(max_examples=200, deadline=None)
    @given(histories)
    def test_matches_pairwise_oracle(self, records):
        ok = [r for r in records if r.status is EvalStatus.OK]
        expected = []
        for r in ok:
            beaten = False
            for o in ok:
                if o is r:
                    continue
                a = [o.qor.value(k) for k in FRONT_KEYS]
                b = [r.qor.value(k) for k in FRONT_KEYS]
                if all(x <= y for x, y in zip(a, b)) and a != b:
                    beaten = True
            if not beaten:
                expected.append(r.iteration)
        assert [r.iteration for r in front(records)] == sorted(expected)


class TestSelect:
    """Best-router selection over a history."""

    def test_baseline_only(self):
        base = record(0, 10, 10)
        assert select([base], base) == "c0"

    def test_prefers_double_improvement(self):
        base = record(0, 10, 10)
        records = [base, record(1, 5, 20), record(2, 9, 9), record(3, 8, 9.5)]
        assert select(records, base) == "c3"

    def test_falls_back_to_lowest_wirelength(self):
        base = record(0, 10, 10)
        records = [base, record(1, 5, 20), record(2, 7, 10)]
        assert select(records, base) == "c1"

    def test_ties_to_lowest_iteration(self):
        base = record(0, 10, 10)
        records = [base, record(1, 8, 5), record(2, 8, 5)]
        assert select(records, base) == "c1"

    def test_failed_baseline(self):
        base = record(0, status=EvalStatus.RUN_ERROR)
        with pytest.raises(SelectionError):
            select([base], base)

    @settings(max_examples=200, deadline=None)
    @given(histories)
    def test_matches_independent_rule(self, records):
        base = records[0]
        spec = ObjectiveSpec()
        ok = [r for r in records if r.status is EvalStatus.OK]
        better = sorted(
            (r for r in ok if r.qor.dr_wl < base.qor.dr_wl and r.qor.gr_rt < base.qor.gr_rt),
            key=lambda r: (r.qor.dr_wl, r.qor.dr_vc, r.qor.gr_rt, r.iteration),
        )
        if better:
            expected = better[0]
        else:
            expected = sorted(ok, key=lambda r: (r.qor.dr_wl, r.qor.dr_vc, r.qor.gr_rt, r.iteration))[0]
        assert select_record(records, base, spec) == expected

    @settings(max_examples=100, deadline=None)
    @given(histories)
    def test_never_worse_than_baseline(self, records):
        chosen = select_record(records, records[0])
        assert chosen.qor.dr_wl <= records[0].qor.dr_wl


class TestDelta:
    def test_positive_means_reduction(self):
        assert delta(200.0, 190.0) == pytest.approx(5.0)
        assert delta(100.0, 110.0) == pytest.approx(-10.0)

    def test_zero_baseline(self):
        with pytest.raises(UndefinedDeltaError):
            delta(0.0, 1.0)


class TestObjectiveSpec:
    def test_defaults(self):
        assert ObjectiveSpec().keys == ("dr_wl", "dr_vc", "gr_rt")

    @pytest.mark.parametrize("keys", [[], ["dr_wl", "dr_wl"], ["speed"]])
    def test_rejects(self, keys):
        with pytest.raises(ValueError):
            ObjectiveSpec(objectives=[Objective(key=k) for k in keys])

"""
Tabular reports and Pareto plots over a run's QoR history.

Report rows carry raw metrics and, except for the baseline row, percent
deltas against the baseline (positive = reduction). LoCM counts lines of
each candidate's document that differ from the baseline document.
"""
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import matplotlib
import pandas as pd

from .errors import SelectionError, UndefinedDeltaError
from .evaluate import QorRecord
from .grid import METRIC_KEYS
from .pareto import FRONT_KEYS, ObjectiveSpec, delta, front, select
from .store import CandidateStore, History
from .strategy import lines_modified

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

logger = logging.getLogger(__name__)

DELTA_KEYS = ("gr_wl", "gr_vc", "gr_twl", "gr_rt", "dr_wl", "dr_vc", "dr_twl", "dr_rt")
PLOT_COLUMNS = ["candidate_id", "iteration", "gr_rt", "dr_wl", "on_front", "is_baseline", "is_selected"]


class RunView:
    """Read-only view of a run directory."""

    def __init__(self, run_dir):
        self.root = Path(run_dir)
        self.records: List[QorRecord] = History(self.root / "qor_history.jsonl").read()
        if not self.records:
            raise SelectionError(f"{self.root} has an empty history")
        self.store = CandidateStore(self.root / "store")

    @property
    def baseline(self) -> QorRecord:
        return self.records[0]

    def selected(self, spec: Optional[ObjectiveSpec] = None) -> str:
        return select(self.records, self.baseline, spec)

    def document(self, cid: str) -> str:
        return self.store.get(cid)


def _delta(base: float, ours: float) -> float:
    try:
        return round(delta(base, ours), 2)
    except UndefinedDeltaError:
        return math.nan


def report_frame(records: Sequence[QorRecord], docs: Dict[str, str]) -> pd.DataFrame:
    baseline = records[0]
    base_doc = docs.get(baseline.candidate_id, "")
    rows = []
    for record in records:
        row = {
            "candidate_id": record.candidate_id,
            "iteration": record.iteration,
            "status": record.status.value,
            "loc_modified": lines_modified(base_doc, docs[record.candidate_id]) if record.candidate_id in docs else None,
            "repair_attempts": record.repair_attempts,
        }
        for key in METRIC_KEYS:
            row[key] = record.qor.value(key) if record.qor is not None else math.nan
        for key in DELTA_KEYS:
            is_base = record.iteration == baseline.iteration
            if is_base or record.qor is None or baseline.qor is None:
                row[f"delta_{key}"] = math.nan
            else:
                row[f"delta_{key}"] = _delta(baseline.qor.value(key), record.qor.value(key))
        row["note"] = record.note
        rows.append(row)
    return pd.DataFrame(rows)


def build_report(view: RunView) -> pd.DataFrame:
    docs = {}
    for record in view.records:
        if view.store.exists(record.candidate_id):
            docs[record.candidate_id] = view.document(record.candidate_id)
    return report_frame(view.records, docs)


def plot_frame(records: Sequence[QorRecord], selected_id: str) -> pd.DataFrame:
    """One row per ok record, the plot's data sidecar."""
    baseline = records[0]
    on_front = {r.iteration for r in front(records, FRONT_KEYS)}
    rows = [
        {
            "candidate_id": r.candidate_id,
            "iteration": r.iteration,
            "gr_rt": r.qor.gr_rt,
            "dr_wl": r.qor.dr_wl,
            "on_front": r.iteration in on_front,
            "is_baseline": r.iteration == baseline.iteration,
            "is_selected": r.candidate_id == selected_id,
        }
        for r in records
        if r.ok
    ]
    return pd.DataFrame(rows, columns=PLOT_COLUMNS)


def plot_run(view: RunView, out, spec: Optional[ObjectiveSpec] = None) -> Path:
    """SVG scatter of dr_wl against gr_rt with front, baseline and selection;
    writes the plotted data next to it with a .csv suffix."""
    out = Path(out)
    selected_id = view.selected(spec)
    data = plot_frame(view.records, selected_id)

    plt.rcParams["svg.hashsalt"] = "router-evolve"
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.scatter(data["gr_rt"], data["dr_wl"], s=18, color="0.6", label="evaluated")
    front_points = data[data["on_front"]].sort_values(["gr_rt", "dr_wl"])
    ax.plot(front_points["gr_rt"], front_points["dr_wl"], color="tab:blue", marker="o", ms=4, label="pareto front")
    base = data[data["is_baseline"]]
    ax.scatter(base["gr_rt"], base["dr_wl"], marker="*", s=160, color="tab:red", label="baseline", zorder=3)
    chosen = data[data["is_selected"]].head(1)
    ax.scatter(chosen["gr_rt"], chosen["dr_wl"], marker="D", s=60, facecolors="none",
               edgecolors="tab:green", linewidths=1.5, label="selected", zorder=4)
    ax.set_xlabel("GR runtime (s)")
    ax.set_ylabel("DR wirelength")
    ax.set_title(view.root.name)
    ax.legend(loc="best", fontsize="small")
    fig.tight_layout()
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)

    sidecar = out.with_suffix(".csv")
    data.to_csv(sidecar, index=False)
    logger.info("wrote %s and %s (%d points)", out, sidecar, len(data))
    return sidecar

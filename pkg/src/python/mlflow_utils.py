"""Optional MLflow tracking of an evolution session."""
import logging
from typing import Optional

import mlflow

from .config import EvolutionConfig
from .evaluate import QorRecord

logger = logging.getLogger(__name__)


class RunTracker:
    """One MLflow run per session; every call is a no-op when tracking is off."""

    def __init__(self, config: EvolutionConfig):
        self.enabled = config.tracking.enabled
        self.config = config
        self._active = False

    def start(self, run_name: Optional[str] = None) -> "RunTracker":
        if not self.enabled:
            return self
        if self.config.tracking.tracking_uri:
            mlflow.set_tracking_uri(self.config.tracking.tracking_uri)
        mlflow.set_experiment(self.config.tracking.experiment)
        mlflow.start_run(run_name=run_name)
        mlflow.log_params({
            "design": str(self.config.design),
            "max_iterations": self.config.max_iterations,
            "repair_budget": self.config.repair_budget,
            "seed": self.config.seed,
            "provider": self.config.provider.kind,
            "objectives": ",".join(self.config.objective.keys),
        })
        self._active = True
        return self

    def log_record(self, record: QorRecord) -> None:
        if not self._active:
            return
        step = record.iteration
        mlflow.log_metric("ok", 1.0 if record.ok else 0.0, step=step)
        mlflow.log_metric("repair_attempts", record.repair_attempts, step=step)
        if record.qor is not None:
            mlflow.log_metrics(record.qor.model_dump(), step=step)

    def log_document(self, candidate_id: str, doc: str) -> None:
        if self._active:
            mlflow.log_text(doc, f"candidates/{candidate_id}.txt")

    def finish(self) -> None:
        if self._active:
            mlflow.end_run()
            self._active = False
            logger.info("closed mlflow run")

    def __enter__(self) -> "RunTracker":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.finish()

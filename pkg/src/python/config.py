"""
Evolution run configuration.

One YAML document; every field has a default and unknown keys are errors.
Secrets never live here: the HTTP provider reads its token from the
environment variable named by ``provider.token_env``.
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigurationError
from .evaluate import DEFAULT_EXPANSION, DEFAULT_SLACK, FakeClock, ResourceLimits, WallClock
from .pareto import ObjectiveSpec

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parents[2] / "models" / "evolution.yaml"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ProviderConfig(_Section):
    kind: Literal["scripted", "command", "http"] = "scripted"
    command: Optional[str] = None
    endpoint: Optional[str] = None
    model: Optional[str] = None
    token_env: str = "ROUTER_EVOLVE_TOKEN"
    timeout_s: float = Field(300.0, gt=0)

    @model_validator(mode="after")
    def _target_present(self) -> "ProviderConfig":
        if self.kind == "command" and not self.command:
            raise ValueError("command provider needs 'command'")
        if self.kind == "http" and not self.endpoint:
            raise ValueError("http provider needs 'endpoint'")
        return self


class ClockConfig(_Section):
    kind: Literal["wall", "fake"] = "wall"
    step_s: float = Field(1.0, gt=0)

    def factory(self):
        if self.kind == "fake":
            return lambda: FakeClock(self.step_s)
        return WallClock


class LimitsConfig(_Section):
    time_limit_s: Optional[float] = Field(60.0, gt=0)
    memory_limit_mb: Optional[float] = Field(None, gt=0)

    def resource_limits(self) -> ResourceLimits:
        return ResourceLimits(time_limit_s=self.time_limit_s, memory_limit_mb=self.memory_limit_mb)


class DetailConfig(_Section):
    expansion: int = Field(DEFAULT_EXPANSION, ge=1)
    slack: int = Field(DEFAULT_SLACK, ge=0)


class TrackingConfig(_Section):
    enabled: bool = False
    experiment: str = "router-evolution"
    tracking_uri: Optional[str] = None


class WarmStartConfig(_Section):
    source_run: Path
    candidate_id: Optional[str] = None


class EvolutionConfig(_Section):
    design: Path = Path("data/benchmarks/congested16.gr")
    run_dir: Path = Path("runs/default")
    baseline: Optional[Path] = None
    max_iterations: int = Field(75, ge=0)
    repair_budget: int = Field(3, ge=0)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    warm_start: Optional[WarmStartConfig] = None
    provider: ProviderConfig = Field(default_factory=ProviderConfig)
    objective: ObjectiveSpec = Field(default_factory=ObjectiveSpec)
    clock: ClockConfig = Field(default_factory=ClockConfig)
    limits: LimitsConfig = Field(default_factory=LimitsConfig)
    detail: DetailConfig = Field(default_factory=DetailConfig)
    tracking: TrackingConfig = Field(default_factory=TrackingConfig)


def parse_config(data: Optional[dict]) -> EvolutionConfig:
    try:
        return EvolutionConfig.model_validate(data or {})
    except ValidationError as exc:
        raise ConfigurationError(f"invalid configuration: {exc}") from exc


def load_config(path) -> EvolutionConfig:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config {path} is not valid YAML: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigurationError(f"config {path} must be a mapping")
    config = parse_config(data)
    logger.info("loaded config %s", path)
    return config


def dump_config(config: EvolutionConfig) -> str:
    return yaml.safe_dump(config.model_dump(mode="json"), sort_keys=True)

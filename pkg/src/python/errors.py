"""Exception hierarchy shared by the router, evaluator and evolution harness."""
from typing import Optional


class RoutingEvolutionError(Exception):
    """Base class for every error raised by this package."""


class MissingRouteError(RoutingEvolutionError):
    """A metric or emitter needed a route that the net does not have."""

    def __init__(self, net_id: str):
        super().__init__(f"net '{net_id}' has no route")
        self.net_id = net_id


class RouteStateError(RoutingEvolutionError):
    """Commit/rip-up called on a net in the wrong state."""


class StrategyError(RoutingEvolutionError):
    """A StrategyDoc failed to parse or validate."""

    def __init__(self, message: str, line: Optional[int] = None):
        location = f"line {line}: " if line is not None else ""
        super().__init__(f"{location}{message}")
        self.line = line


class MutationError(RoutingEvolutionError):
    """A mutation provider failed to deliver a usable patch."""


class PatchRejected(RoutingEvolutionError):
    """A patch could not be applied; the document is unchanged."""

    def __init__(self, message: str, text: Optional[str] = None):
        super().__init__(message)
        self.text = text


class BenchmarkParseError(RoutingEvolutionError):
    """Benchmark text violates the documented grammar."""

    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class HistoryCorruptionError(RoutingEvolutionError):
    """A QoR history line could not be decoded."""

    def __init__(self, message: str, line: int):
        super().__init__(f"qor history line {line}: {message}")
        self.line = line


class ConfigurationError(RoutingEvolutionError):
    """Configuration, design or baseline problem that prevents a run."""


class SelectionError(RoutingEvolutionError):
    """No record qualifies for selection."""


class UndefinedDeltaError(RoutingEvolutionError):
    """Percent delta requested against a zero baseline."""


class RunLockedError(RoutingEvolutionError):
    """Another writer holds the run directory lock."""


class GuideError(RoutingEvolutionError):
    """Route guides could not be emitted."""


class ResourceLimitExceeded(RoutingEvolutionError):
    """An evaluation ran past its time or memory ceiling while routing."""

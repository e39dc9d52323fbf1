"""Exception types shared across the toolkit."""

from __future__ import annotations


class ChaosError(Exception):
    """Base class for all chaoslab errors."""


class DocumentSyntaxError(ChaosError):
    """Input document is not well-formed JSON."""


class SchemaError(ChaosError):
    """Document structure is wrong: missing field, bad type, unknown key."""

    def __init__(self, path: str, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}")


class RangeError(ChaosError):
    """A field value violates its declared range or invariant."""

    def __init__(self, path: str, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}")


class TopologyError(ChaosError):
    """Topology is structurally invalid (cycle, dangling edge, zero replicas)."""


class ScopeError(ChaosError):
    """Scope references an instance or route the target does not have."""


class ScopeResolutionError(ScopeError):
    """A scope selector could not be resolved against the driver's target."""


class ConflictError(ChaosError):
    """A fault of the same kind is already active on an instance."""


class StaleHandle(ChaosError):
    """Injection handle was already reverted."""


class UnsupportedFault(ChaosError):
    """Fault kind is not in the driver's capabilities."""


class DriverIoError(ChaosError):
    """Driver control operation failed; lists handles still active, if known."""

    def __init__(self, message: str, remaining: list[str] | None = None):
        self.remaining = remaining or []
        super().__init__(message)


class PlanError(ChaosError):
    """Stage plan violates the blast-radius ramp rule."""

    def __init__(self, code: str, message: str):
        self.code = code
        super().__init__(message)


class BindError(ChaosError):
    """Proxy could not bind a listen address."""


class UnknownRoute(ChaosError):
    """Named proxy route does not exist."""


class InsufficientData(ChaosError):
    """Metric source does not yet cover the requested window."""


class SourceError(ChaosError):
    """Metric source is unavailable; treated as a violation by watchers."""


class ChaosIoError(ChaosError):
    """Durable write failed (audit chain or result store)."""


class DuplicateRunId(ChaosError):
    """A run with the same id already exists in the store."""


class UnknownScenario(ChaosError):
    """Catalog scenario id does not exist."""


class ParamRangeError(ChaosError):
    """Scenario parameter outside its declared range."""

    def __init__(self, param: str, reason: str):
        self.param = param
        super().__init__(f"{param}: {reason}")

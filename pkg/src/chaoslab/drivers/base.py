"""Driver contract separating experiment logic from fault mechanics.

A driver is used by one run at a time; inject/revert calls arrive serialized
from the orchestrator, but revert_all may come from a cleanup context and
must always leave zero active injections behind.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass

from ..model import FaultAction, FaultKind, ScopeSelector


@dataclass(frozen=True)
class DriverCapabilities:
    reversible_kinds: frozenset[FaultKind]
    scope_granularity: str  # "instance" | "service" | "link"
    supports_heal_check: bool


@dataclass(frozen=True)
class InjectionHandle:
    handle_id: str
    fault: FaultAction
    scope: tuple[str, ...]
    applied_at_us: int


class DriverContract(abc.ABC):
    """Operations every fault-injection backend must provide."""

    @abc.abstractmethod
    def capabilities(self) -> DriverCapabilities: ...

    @abc.abstractmethod
    def resolve_scope(self, selector: ScopeSelector) -> tuple[str, ...]:
        """Deterministic instance set for a scope; stable within one run."""

    @abc.abstractmethod
    def inject(self, fault: FaultAction, scope: tuple[str, ...]) -> InjectionHandle: ...

    @abc.abstractmethod
    def revert(self, handle: InjectionHandle) -> None: ...

    @abc.abstractmethod
    def revert_all(self) -> int:
        """Revert everything still active; idempotent. Returns count reverted."""

    @abc.abstractmethod
    def active_handles(self) -> list[InjectionHandle]: ...

    @abc.abstractmethod
    def heal_check(self) -> bool:
        """True when the target looks structurally healthy to the driver."""


def ceil_fraction(replicas: int, fraction_bp: int) -> int:
    """Affected-instance count: ceil(replicas * fraction_bp / 10000).

    Ceiling, not rounding, so even a 1 bp scope exercises one instance.
    """
    return -(-replicas * fraction_bp // 10000)

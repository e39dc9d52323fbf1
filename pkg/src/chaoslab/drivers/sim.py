"""Driver and metric source backed by the deterministic simulator."""

from __future__ import annotations

from ..errors import ScopeResolutionError, UnsupportedFault
from ..model import FaultAction, FaultKind, MetricSelector, ScopeSelector
from ..simworld import World
from ..trace import MetricSample, Trace, sample_metric
from .base import DriverCapabilities, DriverContract, InjectionHandle, ceil_fraction

SIM_CAPABILITIES = DriverCapabilities(
    reversible_kinds=frozenset(FaultKind),
    scope_granularity="instance",
    supports_heal_check=True,
)


class SimDriver(DriverContract):
    """All thirteen fault kinds, instance-granular, fully reversible."""

    def __init__(self, world: World):
        self.world = world
        self._handles: dict[str, InjectionHandle] = {}

    def capabilities(self) -> DriverCapabilities:
        return SIM_CAPABILITIES

    def resolve_scope(self, selector: ScopeSelector) -> tuple[str, ...]:
        try:
            spec = self.world.topology.service(selector.service)
        except Exception:
            raise ScopeResolutionError(f"unknown service {selector.service!r}") from None
        if selector.instances is not None:
            for inst_id in selector.instances:
                if inst_id not in self.world.instances:
                    raise ScopeResolutionError(f"unknown instance {inst_id!r}")
                if self.world.instances[inst_id].service != selector.service:
                    raise ScopeResolutionError(
                        f"instance {inst_id!r} does not belong to {selector.service!r}"
                    )
            return tuple(selector.instances)
        count = ceil_fraction(spec.replicas, selector.instance_fraction_bp)
        return tuple(f"{selector.service}-{i}" for i in range(count))

    def inject(self, fault: FaultAction, scope: tuple[str, ...]) -> InjectionHandle:
        if fault.kind not in SIM_CAPABILITIES.reversible_kinds:
            raise UnsupportedFault(f"sim driver does not support {fault.kind.value}")
        handle_id = self.world.apply_fault(fault, scope)
        handle = InjectionHandle(
            handle_id=handle_id, fault=fault, scope=tuple(scope), applied_at_us=self.world.now
        )
        self._handles[handle_id] = handle
        return handle

    def revert(self, handle: InjectionHandle) -> None:
        self.world.revert_fault(handle.handle_id)
        self._handles.pop(handle.handle_id, None)

    def revert_all(self) -> int:
        count = self.world.revert_all()
        self._handles.clear()
        return count

    def active_handles(self) -> list[InjectionHandle]:
        active = set(self.world.active_handles())
        return [h for hid, h in self._handles.items() if hid in active]

    def heal_check(self) -> bool:
        return self.world.all_up() and not self.world.active_handles()


class SimMetricSource:
    """MetricSource over a live world; advancing runs the simulation."""

    def __init__(self, world: World):
        self.world = world

    def now_us(self) -> int:
        return self.world.now

    def advance(self, duration_ms: int) -> None:
        self.world.run(duration_ms)

    def sample(self, selector: MetricSelector, window: tuple[int, int]) -> MetricSample:
        return sample_metric(self.world.trace(), selector, window)

    def trace(self) -> Trace:
        return self.world.trace()

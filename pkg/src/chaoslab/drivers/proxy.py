"""Driver and metric source over the TCP fault proxy.

Capabilities are deliberately narrow: stream-level shaping cannot express
packet loss or resource faults, so only latency, bandwidth, refusal, and
connection-kill faults are offered. Scope granularity is the route (link).
"""

from __future__ import annotations

import itertools
import time
from dataclasses import replace

from ..errors import ConflictError, ScopeResolutionError, StaleHandle, UnsupportedFault
from ..model import FaultAction, FaultKind, MetricKind, MetricSelector, ScopeSelector
from ..proxy import LinkShaping, ProxyInstance
from ..trace import MetricSample, nearest_rank_p95
from .base import DriverCapabilities, DriverContract, InjectionHandle

PROXY_CAPABILITIES = DriverCapabilities(
    reversible_kinds=frozenset(
        {
            FaultKind.NETWORK_LATENCY,
            FaultKind.BANDWIDTH_THROTTLE,
            FaultKind.SERVICE_DEPENDENCY_FAILURE,
            FaultKind.DNS_FAILURE,
            FaultKind.DB_CONNECTION_TERMINATION,
        }
    ),
    scope_granularity="link",
    supports_heal_check=True,
)


class ProxyDriver(DriverContract):
    def __init__(self, proxy: ProxyInstance):
        self.proxy = proxy
        self._handles: dict[str, tuple[InjectionHandle, str, LinkShaping]] = {}
        self._active_kinds: dict[tuple[str, FaultKind], str] = {}
        self._counter = itertools.count()

    def capabilities(self) -> DriverCapabilities:
        return PROXY_CAPABILITIES

    def resolve_scope(self, selector: ScopeSelector) -> tuple[str, ...]:
        routes = self.proxy.route_names()
        if selector.service not in routes:
            raise ScopeResolutionError(f"unknown route {selector.service!r}")
        if selector.instances is not None:
            for name in selector.instances:
                if name != selector.service:
                    raise ScopeResolutionError(f"route scope may only name the route itself, got {name!r}")
        return (selector.service,)

    def _shaped(self, current: LinkShaping, fault: FaultAction) -> LinkShaping:
        kind = fault.kind
        if kind is FaultKind.NETWORK_LATENCY:
            return replace(current, latency_us=fault.delay_us, jitter_us=fault.jitter_us)
        if kind is FaultKind.BANDWIDTH_THROTTLE:
            return replace(current, bytes_per_sec=fault.bytes_per_sec)
        if kind in (FaultKind.SERVICE_DEPENDENCY_FAILURE, FaultKind.DNS_FAILURE):
            return replace(current, refuse_new=True)
        if kind is FaultKind.DB_CONNECTION_TERMINATION:
            return replace(current, kill_active=True)
        raise UnsupportedFault(f"proxy driver does not support {kind.value}")

    def inject(self, fault: FaultAction, scope: tuple[str, ...]) -> InjectionHandle:
        if fault.kind not in PROXY_CAPABILITIES.reversible_kinds:
            raise UnsupportedFault(f"proxy driver does not support {fault.kind.value}")
        (route,) = scope
        key = (route, fault.kind)
        if key in self._active_kinds:
            raise ConflictError(f"{fault.kind.value} already active on route {route!r}")
        current = self.proxy.shaping(route)
        previous = self.proxy.apply_shaping(route, self._shaped(current, fault))
        handle = InjectionHandle(
            handle_id=f"p{next(self._counter)}",
            fault=fault,
            scope=(route,),
            applied_at_us=self.proxy.now_us(),
        )
        self._handles[handle.handle_id] = (handle, route, previous)
        self._active_kinds[key] = handle.handle_id
        return handle

    def revert(self, handle: InjectionHandle) -> None:
        entry = self._handles.pop(handle.handle_id, None)
        if entry is None:
            raise StaleHandle(f"handle {handle.handle_id!r} is not active")
        _, route, previous = entry
        self.proxy.apply_shaping(route, previous)
        self._active_kinds.pop((route, handle.fault.kind), None)

    def revert_all(self) -> int:
        # Unwind in reverse application order so stacked snapshots nest.
        count = 0
        for handle_id in sorted(self._handles, key=lambda h: -int(h[1:])):
            handle, _, _ = self._handles[handle_id]
            self.revert(handle)
            count += 1
        return count

    def active_handles(self) -> list[InjectionHandle]:
        return [h for h, _, _ in self._handles.values()]

    def heal_check(self) -> bool:
        return self.proxy.neutral_everywhere()


class ProxyMetricSource:
    """Probe values from per-route connection records.

    A completed connection stands in for a request: its lifetime is the
    latency sample, refusals/kills/upstream failures are the errors.
    """

    def __init__(self, proxy: ProxyInstance, tick_ms: int = 1000, max_error_rate_bp: int = 1000):
        self.proxy = proxy
        self.tick_ms = tick_ms
        self.max_error_rate_bp = max_error_rate_bp

    def now_us(self) -> int:
        return self.proxy.now_us()

    def advance(self, duration_ms: int) -> None:
        time.sleep(duration_ms / 1000)

    def sample(self, selector: MetricSelector, window: tuple[int, int]) -> MetricSample:
        t0, t1 = window
        events = [e for e in self.proxy.events_snapshot(selector.service) if t0 <= e[0] < t1]
        ok_durations = sorted(d for _, kind, d in events if kind == "ok")
        errors = sum(1 for _, kind, _ in events if kind != "ok")

        kind = selector.kind
        if kind is MetricKind.LATENCY_MEAN_US:
            if not ok_durations:
                return MetricSample(0, True)
            return MetricSample(sum(ok_durations) // len(ok_durations), False)
        if kind is MetricKind.LATENCY_P95_US:
            if not ok_durations:
                return MetricSample(0, True)
            return MetricSample(nearest_rank_p95(ok_durations), False)
        if kind is MetricKind.ERROR_RATE_BP:
            denom = len(ok_durations) + errors
            if denom == 0:
                return MetricSample(0, True)
            return MetricSample(10000 * errors // denom, False)
        if kind is MetricKind.THROUGHPUT_RPM:
            if not ok_durations:
                return MetricSample(0, True)
            return MetricSample(len(ok_durations) * 60_000_000 // (t1 - t0), False)
        if kind is MetricKind.AVAILABILITY_BP:
            tick_us = self.tick_ms * 1000
            n = (t1 - t0) // tick_us
            if n == 0:
                return MetricSample(0, True)
            healthy = 0
            for i in range(n):
                lo = t0 + i * tick_us
                hi = lo + tick_us
                tick_events = [e for e in events if lo <= e[0] < hi]
                bad = sum(1 for _, k, _ in tick_events if k != "ok")
                if not tick_events or 10000 * bad // len(tick_events) <= self.max_error_rate_bp:
                    healthy += 1
            return MetricSample(10000 * healthy // n, False)
        raise ValueError(f"unsupported metric kind {kind}")

"""Simulator event traces: fixed-order JSON Lines export, SHA-256 digests,
and windowed metric sampling."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Any, NamedTuple

from .model import MetricKind, MetricSelector

# Event kinds a trace may contain.
KINDS = (
    "arrival",
    "dispatch",
    "complete",
    "fail",
    "drop",
    "instance_down",
    "instance_up",
    "fault_applied",
    "fault_reverted",
)


@dataclass(frozen=True)
class TraceEvent:
    t_us: int
    kind: str
    request_id: str
    service: str
    instance: str
    detail: dict[str, Any]

    def to_line(self) -> str:
        # Top-level keys in fixed order; detail keys sorted for determinism.
        obj = {
            "t_us": self.t_us,
            "kind": self.kind,
            "request_id": self.request_id,
            "service": self.service,
            "instance": self.instance,
            "detail": dict(sorted(self.detail.items())),
        }
        return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


class MetricSample(NamedTuple):
    value: int
    empty: bool


@dataclass(frozen=True)
class Trace:
    """Immutable snapshot of a world's emitted events.

    The conservation identity (arrivals = completions + failures + drops +
    in-flight) is over top-level requests, i.e. events at the entry service
    whose detail marks call="request".
    """

    events: tuple[TraceEvent, ...]
    entry_service: str

    def to_jsonl(self) -> bytes:
        return "".join(e.to_line() + "\n" for e in self.events).encode("utf-8")

    def digest(self) -> str:
        return hashlib.sha256(self.to_jsonl()).hexdigest()

    def span(self) -> tuple[int, int]:
        if not self.events:
            return (0, 0)
        return (self.events[0].t_us, self.events[-1].t_us)

    def summary(self) -> dict[str, int]:
        arrivals = completions = failures = drops = 0
        for e in self.events:
            if e.kind == "arrival":
                arrivals += 1
            elif e.detail.get("call") == "request":
                if e.kind == "complete":
                    completions += 1
                elif e.kind == "fail":
                    failures += 1
                elif e.kind == "drop":
                    drops += 1
        return {
            "arrivals": arrivals,
            "completions": completions,
            "failures": failures,
            "drops": drops,
            "in_flight": arrivals - completions - failures - drops,
        }


def parse_jsonl(data: bytes, entry_service: str = "") -> Trace:
    events = []
    for line in data.decode("utf-8").splitlines():
        if not line:
            continue
        obj = json.loads(line)
        events.append(
            TraceEvent(
                t_us=obj["t_us"],
                kind=obj["kind"],
                request_id=obj["request_id"],
                service=obj["service"],
                instance=obj["instance"],
                detail=obj["detail"],
            )
        )
    return Trace(events=tuple(events), entry_service=entry_service)


def nearest_rank_p95(sorted_values: list[int]) -> int:
    """95th percentile by nearest rank: the ceil(0.95 n)-th of n sorted values."""
    n = len(sorted_values)
    rank = (95 * n + 99) // 100  # ceil(0.95 * n), 1-based
    return sorted_values[rank - 1]


def sample_metric(trace: Trace, selector: MetricSelector, window: tuple[int, int]) -> MetricSample:
    """Sample one metric over the half-open window [t0, t1).

    An empty window is not an error: the sample carries value 0 with the
    empty marker set.
    """
    t0, t1 = window
    if t0 >= t1:
        raise ValueError(f"window start {t0} must precede end {t1}")

    if selector.kind is MetricKind.AVAILABILITY_BP:
        from . import resilience

        rule = resilience.HealthRule(service=selector.service)
        return resilience.availability(trace, rule, window)

    completions: list[int] = []
    failures = 0
    for e in trace.events:
        if e.service != selector.service or not (t0 <= e.t_us < t1):
            continue
        if e.kind == "complete":
            completions.append(e.detail["latency_us"])
        elif e.kind == "fail":
            failures += 1

    if selector.kind is MetricKind.LATENCY_MEAN_US:
        if not completions:
            return MetricSample(0, True)
        return MetricSample(sum(completions) // len(completions), False)

    if selector.kind is MetricKind.LATENCY_P95_US:
        if not completions:
            return MetricSample(0, True)
        return MetricSample(nearest_rank_p95(sorted(completions)), False)

    if selector.kind is MetricKind.ERROR_RATE_BP:
        denom = len(completions) + failures
        if denom == 0:
            return MetricSample(0, True)
        return MetricSample(10000 * failures // denom, False)

    if selector.kind is MetricKind.THROUGHPUT_RPM:
        if not completions:
            return MetricSample(0, True)
        return MetricSample(len(completions) * 60_000_000 // (t1 - t0), False)

    raise ValueError(f"unsupported metric kind {selector.kind}")
